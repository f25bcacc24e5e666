def command_id(client: int, seq: int) -> str:
    """Identificador estável de um comando: c<cliente>-<seq>."""
    return f"c{client}-{seq}"

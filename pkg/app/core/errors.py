# app/core/errors.py
"""
Hierarquia de erros do laboratório.

Cada erro carrega o código de saída usado pela CLI; os routers traduzem
para HTTPException.
"""


class LabError(Exception):
    exit_code: int = 1


class ConfigError(LabError):
    """Configuração inválida (arquivo, flags ou corpo da requisição)."""
    exit_code = 2


class CheckViolationError(LabError):
    """O verificador encontrou violações com --check ativo."""
    exit_code = 3

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class LivelockError(LabError):
    """Orçamento de tempo virtual esgotado com operações de cliente pendentes."""
    exit_code = 4

    def __init__(self, message: str, pending: int = 0):
        super().__init__(message)
        self.pending = pending


class CorruptTraceError(LabError):
    exit_code = 5


class ComparisonMismatchError(LabError):
    """Execuções comparadas diferem em algo além do protocolo."""
    exit_code = 6


class ScheduleError(LabError):
    """Evento agendado no passado virtual."""
    exit_code = 7

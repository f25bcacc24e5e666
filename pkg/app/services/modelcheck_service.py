# app/services/modelcheck_service.py
"""
Verificação exaustiva limitada do Paxos de um slot: 3 nós, proponentes 1 e 2
com valores A e B pendentes, toda ordem de entrega possível até `max_depth`
passos. Procura um estado com dois valores escolhidos para o slot 1.

A variante com check_promise=False (aceitantes ignoram o ballot prometido)
serve de controle: a busca precisa encontrar a violação.
"""
import logging
from typing import Dict, Iterator, List, NamedTuple, Optional, Set, Tuple

from app.protocols.paxos import LEADER, PaxosProtocol
from app.schemas.checker import ModelCheckResult
from app.schemas.consensus import Broadcast, MessageEvent, ProtocolParams, Send, TimerEvent
from app.schemas.paxos import Accept, Accepted, AcceptReject, Commit, PaxosState, Prepare, Promise, Reject
from app.schemas.queue import Job, QueueCommand

log = logging.getLogger(__name__)

NODES = 3
PROPOSERS = (1, 2)
SLOT = 1
DEFAULT_DEPTH = 12
# heartbeats e catch-up não mudam o que é escolhido no slot 1
MODEL_MESSAGES = (Prepare, Promise, Reject, Accept, Accepted, AcceptReject, Commit)

VALUES = {
    1: QueueCommand(id="A", client=1, seq=1, op="enqueue", job=Job(id=0)),
    2: QueueCommand(id="B", client=2, seq=1, op="enqueue", job=Job(id=1)),
}


class InFlight(NamedTuple):
    dst: int
    src: int
    wire: str
    msg: object


class ModelState(NamedTuple):
    nodes: Tuple[PaxosState, ...]
    network: Tuple[InFlight, ...]
    fired: frozenset

    def key(self) -> str:
        parts = [s.model_dump_json() for s in self.nodes]
        parts += [f"{m.dst}<{m.src}:{m.wire}" for m in self.network]
        parts.append(",".join(str(p) for p in sorted(self.fired)))
        return "|".join(parts)


def initial_state(protocol: PaxosProtocol) -> ModelState:
    nodes = []
    for node in range(1, NODES + 1):
        s = protocol.init_state(node, NODES)
        if node in VALUES:
            cmd = VALUES[node]
            s = s.model_copy(update={"pending": ((cmd.client, cmd),), "clients": {cmd.id: cmd.client}})
        nodes.append(s)
    return ModelState(tuple(nodes), (), frozenset())


def _emitted(src: int, actions) -> List[InFlight]:
    out = []
    for a in actions:
        if isinstance(a, Send):
            targets = [a.dst]
        elif isinstance(a, Broadcast):
            targets = [p for p in range(1, NODES + 1) if p != src]
        else:
            continue
        if isinstance(a.payload, MODEL_MESSAGES):
            wire = a.payload.model_dump_json()
            out += [InFlight(dst, src, wire, a.payload) for dst in targets]
    return out


def _ordered(network) -> Tuple[InFlight, ...]:
    return tuple(sorted(network, key=lambda m: (m.dst, m.src, m.wire)))


def _replace(nodes: Tuple[PaxosState, ...], node: int, state: PaxosState) -> Tuple[PaxosState, ...]:
    return nodes[: node - 1] + (state,) + nodes[node:]


def successors(protocol: PaxosProtocol, st: ModelState) -> Iterator[Tuple[str, ModelState]]:
    for p in PROPOSERS:
        if p in st.fired:
            continue
        new, actions = protocol.step(st.nodes[p - 1], TimerEvent(label=LEADER))
        network = _ordered(st.network + tuple(_emitted(p, actions)))
        yield f"timer {p}", ModelState(_replace(st.nodes, p, new), network, st.fired | {p})

    seen: Set[Tuple[int, int, str]] = set()
    for i, m in enumerate(st.network):
        if (m.dst, m.src, m.wire) in seen:
            continue
        seen.add((m.dst, m.src, m.wire))
        new, actions = protocol.step(st.nodes[m.dst - 1], MessageEvent(src=m.src, payload=m.msg))
        rest = st.network[:i] + st.network[i + 1:]
        network = _ordered(rest + tuple(_emitted(m.dst, actions)))
        yield f"{m.msg.type} {m.src}->{m.dst}", ModelState(_replace(st.nodes, m.dst, new), network, st.fired)


def chosen_values(st: ModelState) -> Set[str]:
    values = {s.chosen[SLOT].id for s in st.nodes if SLOT in s.chosen}
    values |= {m.msg.command.id for m in st.network if isinstance(m.msg, Commit) and m.msg.slot == SLOT}
    return values


def explore(max_depth: int = DEFAULT_DEPTH, check_promise: bool = True) -> ModelCheckResult:
    protocol = PaxosProtocol(ProtocolParams(check_promise=check_promise), check_promise=check_promise)
    visited: Dict[str, int] = {}
    path: List[str] = []
    found: Optional[ModelCheckResult] = None

    def dfs(st: ModelState, remaining: int) -> bool:
        nonlocal found
        key = st.key()
        if visited.get(key, -1) >= remaining:
            return False
        visited[key] = remaining
        values = chosen_values(st)
        if len(values) > 1:
            found = ModelCheckResult(
                ok=False, check_promise=check_promise, max_depth=max_depth,
                chosen=sorted(values), path=list(path),
            )
            return True
        if remaining == 0:
            return False
        for label, nxt in successors(protocol, st):
            path.append(label)
            if dfs(nxt, remaining - 1):
                return True
            path.pop()
        return False

    dfs(initial_state(protocol), max_depth)
    if found is not None:
        found.states_explored = len(visited)
        log.info("violação após %d passos (%s)", len(found.path), ", ".join(found.chosen))
        return found
    log.info("nenhuma violação até profundidade %d (%d estados)", max_depth, len(visited))
    return ModelCheckResult(ok=True, check_promise=check_promise, max_depth=max_depth, states_explored=len(visited))

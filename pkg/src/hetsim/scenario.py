"""Scenario files: parsing, validation, defaults and serialization.

Format (UTF-8, line oriented, ``#`` starts a comment)::

    hetsim-scenario v1
    [sim]
    duration = 400
    [chain wired]
    kind: wired
    states: idle, Personal email
    0.6, 0.4
    0.4, 0.6
    [link 1]
    a = 1
    b = core
    [terminal 1]
    kind = wired
    chain = wired
    link = 1
    [profile wired.1]
    destination = 2
    file_size = 65536

Link endpoints that are all digits name terminals; anything else names a
router. ``file_size`` accepts a constant, ``uniform LO HI`` or
``choice A, B, ...`` (bytes).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np

from hetsim.markov import ChainError, ServiceChain, format_chain, validate_chain

log = logging.getLogger(__name__)

FORMAT_HEADER = "hetsim-scenario v1"
KINDS = ("wired", "wireless")

# legacy simulator parameters with no effect at this level of abstraction
LEGACY_KEYS = frozenset(
    {
        "debug mask",
        "debug file index",
        "mtu",
        "data chunk size",
        "number of out streams",
        "cmt congestion window",
        "cmt del acknowledgement",
        "rtx congestion window",
        "heart beat timer",
        "initial receiving window",
        "maximum initial retransmits",
        "rto beta",
        "rto alpha",
        "path maximum retransmission",
        "router",
        "application buffer size",
        "send buffer size",
        "channel type",
        "drop tail",
        "application",
        "burst time",
        "no: of changes",
        "radio-propagation model",
        "network interface type",
        "mac type",
        "link layer type",
        "interface queue type",
        "pause time",
        "transport level protocol",
    }
)


class ScenarioError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScenarioSyntaxError(ScenarioError):
    pass


class UnknownReference(ScenarioError):
    pass


class ValidationFailure(ScenarioError):
    pass


@dataclass(frozen=True)
class FileSize:
    kind: str  # const | uniform | choice
    values: tuple[int, ...]

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "const":
            return self.values[0]
        if self.kind == "uniform":
            lo, hi = self.values
            return int(rng.integers(lo, hi, endpoint=True))
        return self.values[int(rng.integers(len(self.values)))]

    def __str__(self):
        if self.kind == "const":
            return str(self.values[0])
        if self.kind == "uniform":
            return f"uniform {self.values[0]} {self.values[1]}"
        return "choice " + ", ".join(map(str, self.values))

    @classmethod
    def parse(cls, text: str) -> "FileSize":
        parts = text.split(None, 1)
        if len(parts) == 1:
            fs = cls("const", (int(parts[0]),))
        elif parts[0] == "uniform":
            lo, hi = parts[1].split()
            fs = cls("uniform", (int(lo), int(hi)))
            if fs.values[0] > fs.values[1]:
                raise ValueError("uniform bounds out of order")
        elif parts[0] == "choice":
            fs = cls("choice", tuple(int(v) for v in parts[1].split(",")))
        else:
            raise ValueError(f"unknown file size form {text!r}")
        if min(fs.values) <= 0:
            raise ValueError("file sizes must be positive")
        return fs


@dataclass(frozen=True)
class TransportConfig:
    packet_size: int = 1024
    header_bytes: int = 40
    rto_initial: float = 4.0
    rto_min: float = 1.0
    rto_max: float = 60.0
    max_retransmits: int = 6
    initial_window: int = 4
    receive_window: int = 65536


@dataclass(frozen=True)
class TerminalSpec:
    id: int
    kind: str
    link: int
    chain: Optional[str] = None
    capacity_mem: float = 100.0
    capacity_demand: float = 100.0
    auto_terminate: bool = True
    multitasking: bool = True


@dataclass(frozen=True)
class LinkSpec:
    id: int
    a: str
    b: str
    bandwidth: float = 54e6
    delay: float = 0.001
    queue_limit: int = 50
    loss: float = 0.0


@dataclass(frozen=True)
class ServiceProfile:
    service: str
    priority: int
    memory: float
    demand: float
    file_size: FileSize
    destination: int


@dataclass(frozen=True)
class ChainSpec:
    chain: ServiceChain
    kind: Optional[str] = None


@dataclass(frozen=True)
class ScenarioConfig:
    terminals: tuple[TerminalSpec, ...]
    links: tuple[LinkSpec, ...]
    chains: dict[str, ChainSpec] = field(default_factory=dict)
    profiles: dict[tuple[str, int], ServiceProfile] = field(default_factory=dict)
    duration: float = 400.0
    warmup: float = 30.0
    state_epoch: float = 1.0
    window: float = 1.0
    event_cap: int = 10**7
    transport: TransportConfig = TransportConfig()
    ignored: tuple[tuple[str, str], ...] = ()

    def terminal(self, tid: int) -> TerminalSpec:
        for t in self.terminals:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def with_multitasking(self, enabled: bool) -> "ScenarioConfig":
        return replace(
            self, terminals=tuple(replace(t, multitasking=enabled) for t in self.terminals)
        )


SIM_KEYS = {
    "duration": float,
    "warmup": float,
    "state_epoch": float,
    "window": float,
    "event_cap": int,
}
TRANSPORT_KEYS = {f.name: f.type for f in fields(TransportConfig)}
_TYPES = {"int": int, "float": float}


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_UNIT = {"": 1.0, "b": 1.0, "kb": 1e3, "mb": 1e6, "gb": 1e9, "s": 1.0, "ms": 1e-3, "us": 1e-6}


def _quantity(s: str) -> float:
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*([a-zA-Z]*)\s*", s)
    if not m or m.group(2).lower() not in _UNIT:
        raise ValueError(f"not a number: {s!r}")
    return float(m.group(1)) * _UNIT[m.group(2).lower()]


# ---------------------------------------------------------------- raw sections


@dataclass
class _Section:
    kind: str
    arg: str
    line: int
    entries: dict = field(default_factory=dict)  # key -> (value, line)
    rows: list = field(default_factory=list)  # chain matrix lines: (text, line)


_HEADER_RE = re.compile(r"\[\s*(\w+)(?:\s+([^\]]+?))?\s*\]$")


def _split_sections(text: str) -> tuple[list[_Section], bool]:
    sections: list[_Section] = []
    seen_header = False
    cur = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if line != FORMAT_HEADER:
                raise ScenarioSyntaxError(f"expected {FORMAT_HEADER!r} header", lineno)
            seen_header = True
            continue
        m = _HEADER_RE.match(line)
        if m:
            kind, arg = m.group(1), (m.group(2) or "")
            if kind not in ("sim", "terminal", "link", "chain", "profile"):
                raise ScenarioSyntaxError(f"unknown section [{kind}]", lineno)
            if (kind == "sim") != (arg == ""):
                raise ScenarioSyntaxError(f"bad section header {line!r}", lineno)
            cur = _Section(kind, arg, lineno)
            sections.append(cur)
            continue
        if cur is None:
            raise ScenarioSyntaxError("key outside of any section", lineno)
        if cur.kind == "chain":
            if ":" in line and "=" not in line:
                key, val = (p.strip() for p in line.split(":", 1))
                cur.entries[key.lower()] = (val, lineno)
            else:
                cur.rows.append((line, lineno))
            continue
        if "=" not in line:
            raise ScenarioSyntaxError(f"expected 'key = value', got {line!r}", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        key = " ".join(key.split())
        if key in cur.entries:
            raise ScenarioSyntaxError(f"duplicate key {key!r}", lineno)
        cur.entries[key] = (val, lineno)
    return sections, seen_header


def _apply_overrides(sections: list[_Section], overrides: Sequence[str]) -> None:
    for item in overrides:
        if "=" not in item:
            raise ScenarioSyntaxError(f"override {item!r} is not key=value")
        key, val = (p.strip() for p in item.split("=", 1))
        kind, _, rest = key.partition(".")
        if kind in ("terminal", "link", "profile") and "." in rest:
            arg, k = rest.rsplit(".", 1)
        elif kind == "sim" and rest:
            arg, k = "", rest
        else:
            kind, arg, k = "sim", "", key
        target = [s for s in sections if s.kind == kind and s.arg == arg]
        if not target:
            if kind != "sim":
                raise UnknownReference(f"override target [{kind} {arg}] does not exist")
            target = [_Section("sim", "", 0)]
            sections.insert(0, target[0])
        target[0].entries[k] = (val, None)


# ---------------------------------------------------------------- build + validate


def _get(sec: _Section, key: str, conv, default=None, required=False):
    if key not in sec.entries:
        if required:
            raise ValidationFailure(f"[{sec.kind} {sec.arg}] missing key {key!r}", sec.line)
        return default
    val, line = sec.entries.pop(key)
    try:
        return conv(val)
    except (ValueError, TypeError) as exc:
        raise ValidationFailure(f"bad value for {key!r}: {exc}", line or sec.line) from None


def _leftovers(sec: _Section) -> None:
    for key, (_, line) in sec.entries.items():
        raise ScenarioSyntaxError(f"unknown key {key!r} in [{sec.kind}]", line or sec.line)


def _int_id(sec: _Section) -> int:
    try:
        return int(sec.arg)
    except ValueError:
        raise ScenarioSyntaxError(f"[{sec.kind}] id must be an integer", sec.line) from None


def _build(sections: list[_Section]) -> ScenarioConfig:
    sim: dict = {}
    transport: dict = {}
    ignored: list[tuple[str, str]] = []
    chains: dict[str, ChainSpec] = {}
    links: dict[int, LinkSpec] = {}
    terminals: dict[int, TerminalSpec] = {}
    profiles: dict[tuple[str, int], tuple[ServiceProfile, int]] = {}
    lines: dict = {}
    seen_sim = False

    for sec in sections:
        keyline = {k: (ln or sec.line) for k, (_, ln) in sec.entries.items()}
        keyline["_"] = sec.line
        if sec.kind == "sim":
            if seen_sim and sec.line:
                raise ScenarioSyntaxError("duplicate [sim] section", sec.line)
            seen_sim = True
            for key in list(sec.entries):
                if key in SIM_KEYS:
                    sim[key] = _get(sec, key, SIM_KEYS[key])
                elif key in TRANSPORT_KEYS:
                    conv = _TYPES[TRANSPORT_KEYS[key]]
                    transport[key] = _get(sec, key, conv)
                elif key.lower() in LEGACY_KEYS:
                    val, _ = sec.entries.pop(key)
                    ignored.append((key, val))
            _leftovers(sec)

        elif sec.kind == "chain":
            name = sec.arg
            if name in chains:
                raise ScenarioSyntaxError(f"duplicate chain {name!r}", sec.line)
            kind = _get(sec, "kind", str)
            if kind is not None and kind not in KINDS:
                raise ValidationFailure(f"chain kind must be one of {KINDS}", sec.line)
            if "states" not in sec.entries:
                raise ValidationFailure(f"chain {name!r} has no 'states:' line", sec.line)
            states = [s.strip() for s in sec.entries.pop("states")[0].split(",")]
            _leftovers(sec)
            rows = []
            for text, line in sec.rows:
                try:
                    rows.append([float(x) for x in text.split(",")])
                except ValueError:
                    raise ScenarioSyntaxError(f"bad matrix row {text!r}", line) from None
            try:
                chain = validate_chain(states, rows)
            except ChainError as exc:
                row = getattr(exc, "row", None)
                line = sec.rows[row][1] if row is not None else sec.line
                raise ValidationFailure(f"chain {name!r}: {exc}", line) from None
            chains[name] = ChainSpec(chain, kind)

        elif sec.kind == "link":
            lid = _int_id(sec)
            if lid in links:
                raise ScenarioSyntaxError(f"duplicate link {lid}", sec.line)
            link = LinkSpec(
                id=lid,
                a=_get(sec, "a", str, required=True),
                b=_get(sec, "b", str, required=True),
                bandwidth=_get(sec, "bandwidth", _quantity, 54e6),
                delay=_get(sec, "delay", _quantity, 0.001),
                queue_limit=_get(sec, "queue_limit", int, 50),
                loss=_get(sec, "loss", float, 0.0),
            )
            _leftovers(sec)
            at = lambda k: keyline.get(k, sec.line)  # noqa: E731
            if link.bandwidth <= 0:
                raise ValidationFailure("bandwidth must be > 0", at("bandwidth"))
            if link.delay < 0:
                raise ValidationFailure("delay must be >= 0", at("delay"))
            if link.queue_limit < 1:
                raise ValidationFailure("queue_limit must be >= 1", at("queue_limit"))
            if not 0.0 <= link.loss < 1.0:
                raise ValidationFailure("loss must be in [0, 1)", at("loss"))
            if link.a == link.b:
                raise ValidationFailure("link endpoints must differ", at("b"))
            links[lid] = link
            lines[("link", lid)] = keyline

        elif sec.kind == "terminal":
            tid = _int_id(sec)
            if tid in terminals:
                raise ScenarioSyntaxError(f"duplicate terminal {tid}", sec.line)
            term = TerminalSpec(
                id=tid,
                kind=_get(sec, "kind", str, required=True),
                link=_get(sec, "link", int, required=True),
                chain=_get(sec, "chain", str),
                capacity_mem=_get(sec, "capacity_mem", float, 100.0),
                capacity_demand=_get(sec, "capacity_demand", float, 100.0),
                auto_terminate=_get(sec, "auto_terminate", _to_bool, True),
                multitasking=_get(sec, "multitasking", _to_bool, True),
            )
            _leftovers(sec)
            if term.kind not in KINDS:
                raise ValidationFailure(f"terminal kind must be one of {KINDS}", keyline["kind"])
            if term.capacity_mem <= 0 or term.capacity_demand <= 0:
                raise ValidationFailure("capacities must be > 0", sec.line)
            terminals[tid] = term
            lines[("terminal", tid)] = keyline

        elif sec.kind == "profile":
            if "." not in sec.arg:
                raise ScenarioSyntaxError("profile header must be [profile <chain>.<state>]", sec.line)
            cname, state = sec.arg.rsplit(".", 1)
            try:
                state_idx = int(state)
            except ValueError:
                raise ScenarioSyntaxError("profile state must be an integer", sec.line) from None
            if (cname, state_idx) in profiles:
                raise ScenarioSyntaxError(f"duplicate profile {sec.arg}", sec.line)
            prof = dict(
                service=_get(sec, "service", str),
                priority=_get(sec, "priority", int, 1),
                memory=_get(sec, "memory", float, 10.0),
                demand=_get(sec, "demand", float, 10.0),
                file_size=_get(sec, "file_size", FileSize.parse, required=True),
                destination=_get(sec, "destination", int, required=True),
            )
            _leftovers(sec)
            if prof["memory"] < 0 or prof["demand"] < 0:
                raise ValidationFailure("memory and demand must be >= 0", sec.line)
            profiles[(cname, state_idx)] = (prof, keyline)
            lines[("profile", cname, state_idx)] = keyline

    # cross references
    if not terminals:
        raise ValidationFailure("scenario declares no terminals")

    final_profiles: dict[tuple[str, int], ServiceProfile] = {}
    for (cname, k), (prof, kl) in profiles.items():
        if cname not in chains:
            raise UnknownReference(f"profile refers to unknown chain {cname!r}", kl["_"])
        chain = chains[cname].chain
        if not 1 <= k < chain.n:
            raise ValidationFailure(f"profile state {k} not an active state of {cname!r}", kl["_"])
        if prof["service"] is None:
            prof["service"] = chain.states[k]
        if prof["destination"] not in terminals:
            raise UnknownReference(
                f"destination terminal {prof['destination']} does not exist", kl["destination"]
            )
        final_profiles[(cname, k)] = ServiceProfile(**prof)
    for cname, spec in chains.items():
        for k in range(1, spec.chain.n):
            if (cname, k) not in final_profiles:
                raise ValidationFailure(f"chain {cname!r} has no profile for state {k}")

    for lid, link in links.items():
        for end in (link.a, link.b):
            if end.isdigit() and int(end) not in terminals:
                kl = lines[("link", lid)]
                raise UnknownReference(
                    f"link endpoint terminal {end} does not exist", kl["a" if end == link.a else "b"]
                )

    for tid, term in terminals.items():
        kl = lines[("terminal", tid)]
        if term.link not in links:
            raise UnknownReference(f"terminal {tid} attaches to unknown link {term.link}", kl["link"])
        if str(tid) not in (links[term.link].a, links[term.link].b):
            raise ValidationFailure(f"terminal {tid} is not an endpoint of link {term.link}", kl["link"])
        if term.chain is not None:
            if term.chain not in chains:
                raise UnknownReference(f"terminal {tid} uses unknown chain {term.chain!r}", kl["chain"])
            ck = chains[term.chain].kind
            if ck is not None and ck != term.kind:
                raise ValidationFailure(
                    f"{term.kind} terminal {tid} uses {ck} chain {term.chain!r}", kl["chain"]
                )

    cfg = ScenarioConfig(
        terminals=tuple(terminals[k] for k in sorted(terminals)),
        links=tuple(links[k] for k in sorted(links)),
        chains=chains,
        profiles=dict(sorted(final_profiles.items())),
        transport=TransportConfig(**transport),
        ignored=tuple(ignored),
        **sim,
    )
    _check_sim(cfg)

    graph = topology_graph(cfg)
    for term in cfg.terminals:
        if term.chain is None:
            continue
        for k in range(1, cfg.chains[term.chain].chain.n):
            dst = cfg.profiles[(term.chain, k)].destination
            where = lines[("profile", term.chain, k)]["destination"]
            if dst == term.id:
                raise ValidationFailure(
                    f"terminal {term.id} would send state {k} traffic to itself", where
                )
            if not nx.has_path(graph, str(term.id), str(dst)):
                raise ValidationFailure(f"no route from terminal {term.id} to terminal {dst}", where)
    for key, val in cfg.ignored:
        log.warning("ignoring legacy parameter %r = %r", key, val)
    return cfg


def _check_sim(cfg: ScenarioConfig) -> None:
    if cfg.duration < 0:
        raise ValidationFailure("duration must be >= 0")
    if not 0 <= cfg.warmup <= cfg.duration:
        raise ValidationFailure("warmup must lie in [0, duration]")
    if cfg.state_epoch <= 0 or cfg.window <= 0:
        raise ValidationFailure("state_epoch and window must be > 0")
    if cfg.event_cap < 1:
        raise ValidationFailure("event_cap must be >= 1")
    tr = cfg.transport
    if tr.packet_size < 1 or tr.header_bytes < 0:
        raise ValidationFailure("packet_size must be >= 1 and header_bytes >= 0")
    if not 0 < tr.rto_min <= tr.rto_initial <= tr.rto_max:
        raise ValidationFailure("need 0 < rto_min <= rto_initial <= rto_max")
    if tr.max_retransmits < 0 or tr.initial_window < 1:
        raise ValidationFailure("max_retransmits must be >= 0 and initial_window >= 1")
    if tr.receive_window < tr.packet_size:
        raise ValidationFailure("receive_window must hold at least one packet")


def topology_graph(cfg: ScenarioConfig) -> nx.Graph:
    g = nx.Graph()
    for t in cfg.terminals:
        g.add_node(str(t.id))
    for link in cfg.links:
        g.add_edge(link.a, link.b, id=link.id)
    return g


def parse_scenario(text: str, overrides: Iterable[str] = ()) -> ScenarioConfig:
    """Parse and validate scenario text; ``overrides`` are ``key=value`` strings."""
    sections, seen_header = _split_sections(text)
    if not seen_header:
        raise ValidationFailure("scenario declares no terminals")
    _apply_overrides(sections, list(overrides))
    return _build(sections)


def load_scenario(path, overrides: Iterable[str] = ()) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), overrides)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    out = [FORMAT_HEADER, "", "[sim]"]
    for key in SIM_KEYS:
        out.append(f"{key} = {getattr(cfg, key)!r}")
    for f in fields(TransportConfig):
        out.append(f"{f.name} = {getattr(cfg.transport, f.name)!r}")
    for key, val in cfg.ignored:
        out.append(f"{key} = {val}")
    for name, spec in cfg.chains.items():
        out += ["", f"[chain {name}]"]
        if spec.kind is not None:
            out.append(f"kind: {spec.kind}")
        out.append(format_chain(spec.chain).rstrip("\n"))
    for link in cfg.links:
        out += ["", f"[link {link.id}]"]
        out += [f"{f.name} = {_fmt(getattr(link, f.name))}" for f in fields(LinkSpec)[1:]]
    for t in cfg.terminals:
        out += ["", f"[terminal {t.id}]"]
        for f in fields(TerminalSpec)[1:]:
            v = getattr(t, f.name)
            if v is not None:
                out.append(f"{f.name} = {_fmt(v)}")
    for (cname, k), p in cfg.profiles.items():
        out += ["", f"[profile {cname}.{k}]"]
        out += [f"{f.name} = {_fmt(getattr(p, f.name))}" for f in fields(ServiceProfile)]
    return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reference_scenario(kind: str = "campus") -> ScenarioConfig:
    """Bundled scenarios: ``campus`` (mixed wired/wireless) or ``minimal``."""
    if kind not in ("campus", "minimal"):
        raise ValueError(f"unknown reference scenario {kind!r}")
    text = resources.files("hetsim.scenarios").joinpath(f"{kind}.hsc").read_text("utf-8")
    return parse_scenario(text)

"""The coverage-guided stateful fuzzing loop.

Corpus scheduling favors seeds that reached rare or new states (AFLNet
style), mutation works on raw bytes through the kernel operators, the state
graph is inferred from response status codes (node = most recent code,
edges labelled by method), and a plateau detector hands control to the
plateau crew when nothing new has been seen for a window of executions.

Everything is deterministic for a fixed (rng seed, scripted gateway, sim
target): reports are byte-identical across reruns.
"""

from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ragfuzz import __version__, kernels
from ragfuzz.crews import (
    CrewAuditLog,
    EnrichmentInfeasible,
    EnrichmentRejected,
    GrammarCrewEmpty,
    PlateauGenerationFailed,
    run_enrichment_crew,
    run_grammar_crew,
    run_plateau_crew,
)
from ragfuzz.llm_gateway import GatewayTimeout, GatewayUnavailable, SchemaViolation
from ragfuzz.rtsp import (
    METHODS,
    METHOD_SET,
    PLACEHOLDER,
    EmptySeed,
    FsmState,
    SeedSequence,
    parse_seed,
    serialize_request,
)
from ragfuzz.target import SimCrash, SimHang, SimRtspTarget

START_NODE = "<start>"
OTHER_METHOD = "<other>"

DEFAULT_MAP_SIZE = 65536
DEFAULT_PLATEAU_WINDOW = 2000
DEFAULT_PLATEAU_CAP = 10
DEFAULT_SAMPLE_INTERVAL = 1000

DEFAULT_OPERATOR_WEIGHTS = {
    "bitflip": 0.20,
    "byteflip": 0.15,
    "arith": 0.15,
    "block_duplicate": 0.10,
    "block_delete": 0.10,
    "dict_splice": 0.15,
    "template_sub": 0.15,
}

# Tokens any graybox fuzzer would auto-collect from the seeds themselves;
# protocol-aware vocabulary (header names, extra methods) comes from the
# grammar crew when crews are enabled.
BASELINE_DICTIONARY = (
    b"0", b"1", b"9999", b"rtsp://", b"RTSP/1.0", b"stream1", b"//", b": ",
)

DEFAULT_VALUE_POOL = (
    "rtsp://target.example/media/stream1",
    "npt=0-",
    "npt=now-",
    "0",
    "1",
    "application/sdp",
    "RTP/AVP;unicast;client_port=9000-9001",
    "000022B8",
    "later",
    "funky-feature",
    "999999",
)


class CampaignAborted(RuntimeError):
    """Target initialization failed or the corpus was unusable."""


@dataclass
class CampaignConfig:
    budget: int
    rng_seed: int
    crews_enabled: bool = False
    plateau_window: int = DEFAULT_PLATEAU_WINDOW
    plateau_cap: int = DEFAULT_PLATEAU_CAP
    sample_interval: int = DEFAULT_SAMPLE_INTERVAL
    map_size: int = DEFAULT_MAP_SIZE
    top_k: int = 4
    product_keyword: str = "live555"
    randomize_session_ids: bool = False
    crew_deadline: Optional[float] = None  # seconds; None for scripted gateways
    operator_weights: dict = field(default_factory=lambda: dict(DEFAULT_OPERATOR_WEIGHTS))

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.map_size & (self.map_size - 1):
            raise ValueError("map_size must be a power of two")

    def to_json(self) -> dict:
        return {
            "budget": self.budget,
            "rng_seed": self.rng_seed,
            "crews_enabled": self.crews_enabled,
            "plateau_window": self.plateau_window,
            "plateau_cap": self.plateau_cap,
            "sample_interval": self.sample_interval,
            "map_size": self.map_size,
            "top_k": self.top_k,
            "product_keyword": self.product_keyword,
            "randomize_session_ids": self.randomize_session_ids,
            "crew_deadline": self.crew_deadline,
            "operator_weights": dict(sorted(self.operator_weights.items())),
        }


class CoverageMap:
    """Fixed-size edge bitmap; count always equals the set-bit population."""

    def __init__(self, size: int = DEFAULT_MAP_SIZE):
        self.size = size
        self.mask = size - 1
        self.bits = bytearray(size // 8)
        self.count = 0

    def add(self, probe_ids) -> int:
        new = kernels.update_bitmap(self.bits, probe_ids, self.mask)
        self.count += new
        return new


class StateGraph:
    """Status-code state machine inferred from responses.

    Node identity = most recent response status code (start sentinel before
    the first response of a sequence); edges are (from, to, method) with hit
    counts. Node and edge sets only ever grow.
    """

    def __init__(self):
        self.nodes: set = set()
        self.edges: dict = {}

    def update(self, statuses: Sequence[int], methods: Sequence[str]) -> tuple:
        new_nodes = 0
        new_edges = 0
        prev = START_NODE
        for status, method in zip(statuses, methods):
            node = str(status)
            if node not in self.nodes:
                self.nodes.add(node)
                new_nodes += 1
            label = method if method in METHOD_SET else OTHER_METHOD
            key = (prev, node, label)
            if key in self.edges:
                self.edges[key] += 1
            else:
                self.edges[key] = 1
                new_edges += 1
            prev = node
        return new_nodes, new_edges


class PlateauDetector:
    """Fires when (current - last_progress) >= window; re-arms on fire."""

    def __init__(self, window: int):
        self.window = window
        self.last_progress = 0

    def observe(self, index: int, progressed: bool) -> bool:
        if progressed:
            self.last_progress = index
            return False
        if index - self.last_progress >= self.window:
            self.last_progress = index
            return True
        return False


@dataclass
class Trace:
    requests: list = field(default_factory=list)  # requests that got a response
    responses: list = field(default_factory=list)
    methods: list = field(default_factory=list)  # every method sent, incl. crashing
    probes: list = field(default_factory=list)
    states: list = field(default_factory=list)
    crashed: bool = False
    crash_signature: Optional[str] = None
    crash_kind: Optional[str] = None
    progressed: bool = False

    @property
    def statuses(self) -> list:
        return [r.status_code for r in self.responses]

    @property
    def exchanges(self) -> list:
        return list(zip(self.requests, self.responses))


@dataclass
class CampaignStats:
    executions: int = 0
    branches: int = 0
    states: int = 0
    transitions: int = 0
    series: list = field(default_factory=list)
    crashes: list = field(default_factory=list)
    plateau_triggers: int = 0
    plateau_invocations: int = 0
    plateau_packets: list = field(default_factory=list)
    plateau_failures: int = 0
    grammar_templates: int = 0
    enrichment_ok: int = 0
    enrichment_failed: int = 0
    corpus_size: int = 0
    state_nodes: list = field(default_factory=list)

    def to_json(self, cfg: CampaignConfig) -> dict:
        return {
            "version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": cfg.to_json(),
            "executions": self.executions,
            "branches": self.branches,
            "states": self.states,
            "state_nodes": list(self.state_nodes),
            "transitions": self.transitions,
            "crashes": list(self.crashes),
            "plateau": {
                "triggers": self.plateau_triggers,
                "invocations": self.plateau_invocations,
                "packets": list(self.plateau_packets),
                "failures": self.plateau_failures,
            },
            "crews": {
                "grammar_templates": self.grammar_templates,
                "enrichment_ok": self.enrichment_ok,
                "enrichment_failed": self.enrichment_failed,
            },
            "corpus_size": self.corpus_size,
            "series": [list(s) for s in self.series],
        }


@dataclass
class CorpusEntry:
    data: bytes
    states: frozenset  # status-code node ids its trace visited
    found_new_state: bool
    probes_hit: int
    origin: str = "seed"


def seed_weight(entry: CorpusEntry, state_counts: dict, corpus_size: int) -> float:
    """Selection energy: ×2 for entries that discovered a state, plus a
    rarity factor in [1, 2) favoring entries reaching states few others do."""
    w = 2.0 if entry.found_new_state else 1.0
    if entry.states and corpus_size:
        rarest = min(state_counts.get(s, 1) for s in entry.states)
        w *= 1.0 + (corpus_size - rarest) / corpus_size
    return w


class Corpus:
    def __init__(self):
        self.entries: list = []
        self.state_counts: dict = {}
        self._cum: Optional[list] = None

    def add(self, entry: CorpusEntry) -> None:
        self.entries.append(entry)
        for s in entry.states:
            self.state_counts[s] = self.state_counts.get(s, 0) + 1
        self._cum = None

    def weights(self) -> list:
        n = len(self.entries)
        return [seed_weight(e, self.state_counts, n) for e in self.entries]

    def select(self, rng) -> CorpusEntry:
        if not self.entries:
            raise CampaignAborted("corpus is empty")
        if self._cum is None:
            cum = []
            total = 0.0
            for w in self.weights():
                total += w
                cum.append(total)
            self._cum = cum
        r = rng.random() * self._cum[-1]
        return self.entries[bisect.bisect_right(self._cum, r)]

    def method_counts(self) -> dict:
        counts = {m: 0 for m in METHODS}
        for entry in self.entries:
            for req in parse_seed_safe(entry.data).requests:
                if req.method in counts:
                    counts[req.method] += 1
        return counts


def parse_seed_safe(data: bytes) -> SeedSequence:
    try:
        return parse_seed(data)
    except EmptySeed:
        return SeedSequence(requests=())


def select_seed(corpus: Corpus, rng) -> CorpusEntry:
    return corpus.select(rng)


def execute(seq: SeedSequence, target: SimRtspTarget, requests=None) -> Trace:
    """Send the sequence to a freshly reset target, collecting responses,
    probe ids and the target's post-request states; crashes and hangs flag
    the trace instead of propagating."""
    target.reset()
    trace = Trace()
    for req in (requests if requests is not None else seq.requests):
        trace.methods.append(req.method)
        try:
            resp, probes = target.handle(req)
        except SimCrash as exc:
            trace.crashed = True
            trace.crash_signature = exc.signature
            trace.crash_kind = "crash"
            break
        except SimHang as exc:
            trace.crashed = True
            trace.crash_signature = exc.signature
            trace.crash_kind = "hang"
            break
        trace.requests.append(req)
        trace.responses.append(resp)
        trace.probes.extend(probes)
        trace.states.append(target.current_state)
    return trace


def update_state_graph(graph: StateGraph, trace: Trace) -> tuple:
    return graph.update(trace.statuses, [r.method for r in trace.requests])


# ---------------------------------------------------------------------------
# Mutation

_REQ_LINE_BYTES = re.compile(rb"(?m)^[A-Za-z_]+ \S+ RTSP/[^\r\n]*$")


class Mutator:
    """One operator per call, chosen by configured weights.

    Operators that cannot apply (no templates, input too short) fall back to
    a dictionary splice so the rng draw count stays stable.
    """

    def __init__(self, weights: dict, dictionary: Sequence[bytes],
                 values: Sequence[str], templates: Sequence = ()):
        self.names = sorted(weights)
        total = sum(weights[n] for n in self.names)
        self.cum = []
        acc = 0.0
        for name in self.names:
            acc += weights[name] / total
            self.cum.append(acc)
        self.dictionary = list(dictionary)
        self.values = list(values)
        self.templates = list(templates)

    def pick_operator(self, rng) -> str:
        idx = bisect.bisect_right(self.cum, rng.random())
        return self.names[min(idx, len(self.names) - 1)]

    def mutate(self, data: bytes, rng) -> bytes:
        op = self.pick_operator(rng)
        return getattr(self, f"_op_{op}")(data, rng)

    def _op_bitflip(self, data: bytes, rng) -> bytes:
        return kernels.bitflip(data, rng.randrange(len(data) * 8))

    def _op_byteflip(self, data: bytes, rng) -> bytes:
        return kernels.byteflip(data, rng.randrange(len(data)))

    def _op_arith(self, data: bytes, rng) -> bytes:
        pos = rng.randrange(len(data))
        delta = rng.randint(1, 35) * rng.choice((1, -1))
        return kernels.arith_byte(data, pos, delta)

    def _op_block_duplicate(self, data: bytes, rng) -> bytes:
        n = len(data)
        start = rng.randrange(n)
        length = rng.randint(1, min(64, n - start))
        dest = rng.randrange(n + 1)
        return kernels.block_duplicate(data, start, length, dest)

    def _op_block_delete(self, data: bytes, rng) -> bytes:
        n = len(data)
        if n <= 4:
            return self._op_dict_splice(data, rng)
        start = rng.randrange(n - 1)
        length = rng.randint(1, min(32, n - start - 1))
        return kernels.block_delete(data, start, length)

    def _op_dict_splice(self, data: bytes, rng) -> bytes:
        token = self.dictionary[rng.randrange(len(self.dictionary))]
        pos = rng.randrange(len(data) + 1)
        return kernels.insert_bytes(data, pos, token)

    def _op_template_sub(self, data: bytes, rng) -> bytes:
        if not self.templates:
            return self._op_dict_splice(data, rng)
        tpl = self.templates[rng.randrange(len(self.templates))]
        idx = rng.randrange(1, len(tpl.lines)) if len(tpl.lines) > 1 else 0
        line = tpl.lines[idx]
        while PLACEHOLDER in line:
            line = line.replace(PLACEHOLDER, self.values[rng.randrange(len(self.values))], 1)
        raw = line.encode("latin-1")
        starts = [m.start() for m in _REQ_LINE_BYTES.finditer(data)]
        if not starts:
            pos = rng.randrange(len(data) + 1)
            return kernels.insert_bytes(data, pos, raw + b"\r\n")
        msg = starts[rng.randrange(len(starts))]
        end = data.find(b"\r\n\r\n", msg)
        if end < 0:
            end = len(data)
        if idx == 0:
            line_end = data.find(b"\r\n", msg)
            if line_end < 0:
                line_end = end
            return data[:msg] + raw + data[line_end:]
        name, sep, _ = line.partition(":")
        if sep:
            needle = b"\r\n" + name.encode("latin-1").lower() + b":"
            at = data[msg:end].lower().find(needle)
            if at >= 0:
                hstart = msg + at + 2
                hend = data.find(b"\r\n", hstart)
                if hend < 0 or hend > end:
                    hend = end
                return data[:hstart] + raw + data[hend:]
        line_end = data.find(b"\r\n", msg)
        if line_end < 0:
            return data + b"\r\n" + raw
        return data[: line_end + 2] + raw + b"\r\n" + data[line_end + 2 :]


def mutate(seed: SeedSequence, rng, templates: Sequence = (),
           weights: Optional[dict] = None) -> SeedSequence:
    """Spec-level mutation entry point: one operator applied to the seed's
    byte form, reparsed leniently (an unparseable result yields an empty
    sequence, which the engine treats as a null execution)."""
    mutator = Mutator(weights or DEFAULT_OPERATOR_WEIGHTS, BASELINE_DICTIONARY,
                      DEFAULT_VALUE_POOL, templates)
    return parse_seed_safe(mutator.mutate(seed.to_bytes(), rng))


def dictionary_from_templates(templates) -> list:
    """Protocol-aware splice tokens mined from grammar-crew templates."""
    tokens = list(BASELINE_DICTIONARY)
    seen = set(tokens)
    for tpl in templates:
        for candidate in ([tpl.method.encode("latin-1")]
                          + [ln.split(PLACEHOLDER)[0].strip().encode("latin-1")
                             for ln in tpl.lines[1:]]):
            if candidate and candidate not in seen:
                tokens.append(candidate)
                seen.add(candidate)
    return tokens


# ---------------------------------------------------------------------------
# Campaign

def desired_methods(corpus: Corpus, seed_methods: Sequence[str]) -> list:
    """The two in-scope methods least frequent in the corpus and absent from
    this seed, ties broken by enumeration order."""
    counts = corpus.method_counts()
    candidates = [m for m in METHODS if m not in seed_methods]
    candidates.sort(key=lambda m: (counts[m], METHODS.index(m)))
    return candidates[:2]


def run_campaign(cfg: CampaignConfig, target: Optional[SimRtspTarget] = None,
                 seeds: Sequence[bytes] = (), index=None, gateway=None,
                 cve_client=None, audit: Optional[CrewAuditLog] = None) -> CampaignStats:
    """Run one campaign to its execution budget; deterministic for a fixed
    (cfg, seeds, scripted gateway, sim target)."""
    import random

    if target is None:
        try:
            target = SimRtspTarget()
        except Exception as exc:  # pragma: no cover - constructor is trivial
            raise CampaignAborted(f"target initialization failed: {exc}") from exc
    rng = random.Random(cfg.rng_seed)
    stats = CampaignStats()
    coverage = CoverageMap(cfg.map_size)
    graph = StateGraph()
    detector = PlateauDetector(cfg.plateau_window)
    corpus = Corpus()
    audit = audit if audit is not None else CrewAuditLog()

    parsed_seeds = []
    for data in seeds:
        seq = parse_seed_safe(data)
        if seq.requests:
            parsed_seeds.append((data, seq))
    if not parsed_seeds:
        raise CampaignAborted("no parseable seed in corpus")

    templates = []
    if cfg.crews_enabled and index is not None and gateway is not None:
        try:
            templates = run_grammar_crew(index, gateway, k=cfg.top_k,
                                         deadline=cfg.crew_deadline, audit=audit)
        except (GrammarCrewEmpty, GatewayTimeout, GatewayUnavailable, SchemaViolation):
            templates = []
        stats.grammar_templates = len(templates)

    mutator = Mutator(cfg.operator_weights,
                      dictionary_from_templates(templates) if templates
                      else BASELINE_DICTIONARY,
                      DEFAULT_VALUE_POOL, templates)

    last_exchanges: list = []
    last_state = FsmState.INIT

    def run_one(data: bytes, origin: str) -> Optional[Trace]:
        nonlocal last_exchanges, last_state
        if stats.executions >= cfg.budget:
            return None
        seq = parse_seed_safe(data)
        trace = execute(seq, target)
        stats.executions += 1
        new_bits = coverage.add(trace.probes)
        new_nodes, new_edges = update_state_graph(graph, trace)
        stats.branches = coverage.count
        stats.states = len(graph.nodes)
        stats.transitions = len(graph.edges)
        if trace.crashed and trace.crash_signature not in {c["signature"] for c in stats.crashes}:
            stats.crashes.append({
                "signature": trace.crash_signature,
                "kind": trace.crash_kind,
                "execution": stats.executions,
            })
        if trace.responses:
            last_exchanges = list(zip(trace.requests, trace.responses))[-8:]
            last_state = trace.states[-1] if trace.states else FsmState.INIT
        progressed = bool(new_bits or new_nodes or new_edges)
        if new_bits or new_nodes:
            corpus.add(CorpusEntry(
                data=data,
                states=frozenset(str(s) for s in trace.statuses),
                found_new_state=bool(new_nodes),
                probes_hit=len(set(trace.probes)),
                origin=origin,
            ))
        if stats.executions % cfg.sample_interval == 0:
            stats.series.append((stats.executions, stats.branches, stats.states,
                                 stats.transitions))
        trace.progressed = progressed
        return trace

    # Initial corpus: dry-run every seed once.
    for data, seq in parsed_seeds:
        if run_one(data, "seed") is None:
            break

    # Seed enrichment pass (once per initial seed).
    if cfg.crews_enabled and index is not None and gateway is not None:
        for data, seq in parsed_seeds:
            if stats.executions >= cfg.budget:
                break
            wanted = desired_methods(corpus, seq.methods)
            try:
                enriched = run_enrichment_crew(seq, wanted, index, gateway,
                                               k=cfg.top_k,
                                               deadline=cfg.crew_deadline,
                                               audit=audit)
            except (EnrichmentInfeasible, EnrichmentRejected, GatewayTimeout,
                    GatewayUnavailable, SchemaViolation, ValueError):
                stats.enrichment_failed += 1
                continue
            stats.enrichment_ok += 1
            run_one(enriched.to_bytes(), "enrichment")

    # Main loop.
    while stats.executions < cfg.budget:
        entry = corpus.select(rng)
        mutated = mutator.mutate(entry.data, rng)
        trace = run_one(mutated, "mutation")
        if trace is None:
            break
        fired = detector.observe(stats.executions, trace.progressed)
        if fired:
            stats.plateau_triggers += 1
            if (cfg.crews_enabled and index is not None and gateway is not None
                    and stats.plateau_invocations < cfg.plateau_cap
                    and last_exchanges):
                stats.plateau_invocations += 1
                try:
                    packet = run_plateau_crew(
                        last_exchanges, last_state, index, gateway,
                        cves=cve_client, product_keyword=cfg.product_keyword,
                        k=cfg.top_k, deadline=cfg.crew_deadline, audit=audit,
                    )
                except (PlateauGenerationFailed, GatewayTimeout,
                        GatewayUnavailable, SchemaViolation, ValueError):
                    stats.plateau_failures += 1
                    continue
                payload = serialize_request(packet.request)
                stats.plateau_packets.append(payload.decode("latin-1"))
                best_idx = max(range(len(corpus.entries)),
                               key=lambda i: (corpus.entries[i].probes_hit, -i))
                run_one(corpus.entries[best_idx].data + payload, "plateau")

    if not stats.series or stats.series[-1][0] != stats.executions:
        stats.series.append((stats.executions, stats.branches, stats.states,
                             stats.transitions))
    stats.corpus_size = len(corpus.entries)
    stats.state_nodes = sorted(graph.nodes)
    return stats


# ---------------------------------------------------------------------------
# Reports

def write_report(dirpath, stats: CampaignStats, cfg: CampaignConfig,
                 extra: Optional[dict] = None) -> Path:
    """Write report.json (stable ordering, no wall-clock content) and
    series.csv; returns the report path."""
    out = Path(dirpath)
    out.mkdir(parents=True, exist_ok=True)
    payload = stats.to_json(cfg)
    if extra:
        payload["invocation"] = extra
    report = out / "report.json"
    report.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                      encoding="utf-8")
    lines = ["executions,branches,states,transitions"]
    lines.extend(",".join(str(v) for v in row) for row in stats.series)
    (out / "series.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def compare_reports(reports: Sequence[dict], labels: Sequence[str]) -> dict:
    """Metric table across runs with percentage deltas vs the first run."""
    metrics = ("branches", "states", "transitions")
    table = {"labels": list(labels), "metrics": {}}
    for metric in metrics:
        values = [r[metric] for r in reports]
        row = {"values": values}
        if len(values) > 1 and values[0]:
            row["delta_pct"] = [
                round((v - values[0]) / values[0] * 100.0, 1) for v in values
            ]
        table["metrics"][metric] = row
    return table


def render_comparison(table: dict) -> str:
    labels = table["labels"]
    rows = []
    for metric, row in table["metrics"].items():
        cells = []
        for i, value in enumerate(row["values"]):
            cell = str(value)
            if "delta_pct" in row and i > 0:
                cell += f" ({row['delta_pct'][i]:+.1f}%)"
            cells.append(cell)
        rows.append((metric, cells))
    width = max(
        [len(l) for l in labels]
        + [len(c) for _, cells in rows for c in cells]
    ) + 2
    header = "metric".ljust(14) + "".join(l.rjust(width) for l in labels)
    lines = [header, "-" * len(header)]
    for metric, cells in rows:
        lines.append(metric.ljust(14) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines)


def comparison_csv(table: dict) -> str:
    labels = table["labels"]
    lines = ["metric," + ",".join(labels)]
    for metric, row in table["metrics"].items():
        lines.append(metric + "," + ",".join(str(v) for v in row["values"]))
        if "delta_pct" in row:
            lines.append(metric + "_delta_pct,," + ",".join(
                str(v) for v in row["delta_pct"][1:]))
    return "\n".join(lines) + "\n"

"""Independent oracle implementations the tests check the package against.

Everything here is written from the documented contracts, not by calling
the code under test: a blank-line splitter, a sequential-greedy chunker, a
brute-force cosine ranker, an FSM insertion enumerator built on a fresh
transition table, and a plateau reference walker.
"""

import itertools
import math


def blank_line_split(text: str) -> list:
    """The one-line paragraph splitter: blocks of non-blank lines."""
    blocks = []
    current = []
    for line in text.splitlines():
        if line.strip():
            current.append(line)
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def greedy_chunk_oracle(texts, sim, theta, max_chunks):
    """Sequential-greedy grouping; returns a list of member-index lists.

    Summaries stay the seeding text (matches the package's no-refinement
    mode). Argmax ties resolve to the earliest-created group.
    """
    groups = []  # [summary, [indices]]
    for i, text in enumerate(texts):
        best = None
        best_score = -1.0
        for j, (summary, _members) in enumerate(groups):
            score = sim(text, summary)
            if score > best_score:
                best, best_score = j, score
        if best is None or best_score < theta:
            if len(groups) < max_chunks:
                groups.append([text, [i]])
                continue
        groups[best][1].append(i)
    return [members for _summary, members in groups]


def cosine(a, b) -> float:
    num = sum(x * y for x, y in zip(a, b))
    da = math.sqrt(sum(x * x for x in a))
    db = math.sqrt(sum(y * y for y in b))
    if da == 0.0 or db == 0.0:
        return 0.0
    return num / (da * db)


def brute_force_ranking(entries, query_vector, k):
    """entries: (chunk_id, vector) pairs -> top-k ids by cosine then id."""
    scored = sorted(
        ((cosine(query_vector, vec), cid) for cid, vec in entries),
        key=lambda t: (-t[0], t[1]),
    )
    return [cid for _score, cid in scored[:k]]


# Fresh statement of the session state machine (not imported from the
# package): explicit rows only.
_STATELESS = {"OPTIONS", "DESCRIBE", "ANNOUNCE", "GET_PARAMETER", "SET_PARAMETER"}
_MOVES = {
    ("INIT", "SETUP"): "READY",
    ("READY", "PLAY"): "PLAYING",
    ("READY", "RECORD"): "RECORDING",
    ("PLAYING", "PAUSE"): "READY",
    ("RECORDING", "PAUSE"): "READY",
}


def reference_allows(state: str, method: str) -> bool:
    return method in _STATELESS or method == "TEARDOWN" or (state, method) in _MOVES


def reference_next(state: str, method: str) -> str:
    if method == "TEARDOWN":
        return "INIT"
    if method in _STATELESS:
        return state
    return _MOVES.get((state, method), state)


def reference_walk_valid(methods) -> bool:
    state = "INIT"
    for m in methods:
        if not reference_allows(state, m):
            return False
        state = reference_next(state, m)
    return True


def enumerate_valid_enrichments(base, missing) -> set:
    """Every output method tuple that (a) keeps base as an ordered
    subsequence, (b) adds exactly the missing methods once each, and (c)
    walks the machine through explicit rows only."""
    outputs = set()
    n = len(base)
    for perm in itertools.permutations(missing):
        for slots in itertools.product(range(n + 1), repeat=len(perm)):
            trial = list(base)
            for pos, method in sorted(zip(slots, perm), key=lambda t: t[0],
                                      reverse=True):
                trial.insert(pos, method)
            candidate = tuple(trial)
            if reference_walk_valid(candidate):
                outputs.add(candidate)
    return outputs


def plateau_reference(progress_indices, window, horizon) -> list:
    """Indices where a re-arming >=window detector fires."""
    fires = []
    last = 0
    for i in range(1, horizon + 1):
        if i in progress_indices:
            last = i
        elif i - last >= window:
            fires.append(i)
            last = i
    return fires

"""Textual IR-subset parser and static feature extraction.

The features are control-flow and instruction-mix statistics computed from
unoptimized IR text: block/edge counts, degree buckets, phi statistics, and
per-kind instruction counts, summed over all functions of a module. Host code
is never part of the input.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

FEATURE_COUNT = 24

FEATURE_NAMES = (
    "block_count",                    # 1
    "single_successor_blocks",        # 2
    "two_successor_blocks",           # 3
    "many_successor_blocks",          # 4
    "single_predecessor_blocks",      # 5
    "two_predecessor_blocks",         # 6
    "many_predecessor_blocks",        # 7
    "single_pred_single_succ_blocks", # 8
    "cfg_edge_count",                 # 9
    "instruction_count",              # 10
    "avg_instructions_per_block",     # 11
    "phi_count",                      # 12
    "blocks_with_phis",               # 13
    "avg_phi_args",                   # 14
    "conditional_branches",           # 15
    "unconditional_branches",         # 16
    "load_count",                     # 17
    "store_count",                    # 18
    "int_arith_count",                # 19
    "float_arith_count",              # 20
    "call_count",                     # 21
    "compare_count",                  # 22
    "address_calc_count",             # 23
    "function_count",                 # 24
)

_BODY_KINDS = {
    "load": "load",
    "store": "store",
    "iadd": "int_arith",
    "fadd": "float_arith",
    "cmp": "cmp",
    "call": "call",
    "addr": "addr",
    "other": "other",
}

_TERMINATOR_KINDS = {"br", "condbr", "switch", "ret"}


class IrParseError(ValueError):
    """Syntax or structural error in IR-subset text, with a line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegenerateVectorError(ValueError):
    """Raised when a feature vector needed for a distance is all-zero."""


@dataclass(frozen=True)
class IrTerminator:
    kind: str
    targets: tuple[str, ...] = ()


@dataclass(frozen=True)
class IrBlock:
    label: str
    phi_args: tuple[int, ...]
    body: tuple[str, ...]
    terminator: IrTerminator


@dataclass(frozen=True)
class IrFunction:
    name: str
    blocks: tuple[IrBlock, ...]


@dataclass(frozen=True)
class IrModule:
    functions: tuple[IrFunction, ...]


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-dimension, non-negative static feature counts."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != FEATURE_COUNT:
            raise ValueError(f"expected {FEATURE_COUNT} features, got {len(self.values)}")
        if any(v < 0 for v in self.values):
            raise ValueError("feature values must be non-negative")

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    def __len__(self) -> int:
        return FEATURE_COUNT

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))


def parse_ir(text: str) -> IrModule:
    """Parse IR-subset text into a validated module.

    Grammar (line oriented, ``#`` starts a comment): ``func <name> {`` opens a
    function, ``<label>:`` opens a block, ``phi <k>`` declares a phi with k
    arguments (phis precede the body), body lines are one of
    ``load store iadd fadd cmp call addr other``, terminators are
    ``br <l>``, ``condbr <l1> <l2>``, ``switch <l1> ...``, ``ret``, and ``}``
    closes the function.
    """
    functions: list[IrFunction] = []
    function_names: set[str] = set()

    fn_name: str | None = None
    fn_line = 0
    blocks: list[IrBlock] = []
    labels: set[str] = set()
    target_lines: dict[str, int] = {}

    label: str | None = None
    phi_args: list[int] = []
    body: list[str] = []
    terminator: IrTerminator | None = None
    block_line = 0

    def close_block(line: int) -> None:
        nonlocal label, phi_args, body, terminator
        if label is None:
            return
        if terminator is None:
            raise IrParseError(f"block {label!r} has no terminator", block_line)
        blocks.append(IrBlock(label, tuple(phi_args), tuple(body), terminator))
        label, phi_args, body, terminator = None, [], [], None

    def close_function(line: int) -> None:
        nonlocal fn_name, blocks, labels, target_lines
        close_block(line)
        if not blocks:
            raise IrParseError(f"function {fn_name!r} has no blocks", fn_line)
        for target, target_line in target_lines.items():
            if target not in labels:
                raise IrParseError(f"undefined branch target {target!r}", target_line)
        functions.append(IrFunction(fn_name, tuple(blocks)))
        fn_name, blocks, labels, target_lines = None, [], set(), {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()

        if tokens[0] == "func":
            if fn_name is not None:
                raise IrParseError("nested function definition", lineno)
            if len(tokens) != 3 or tokens[2] != "{":
                raise IrParseError("expected 'func <name> {'", lineno)
            if tokens[1] in function_names:
                raise IrParseError(f"duplicate function name {tokens[1]!r}", lineno)
            function_names.add(tokens[1])
            fn_name = tokens[1]
            fn_line = lineno
            continue

        if line == "}":
            if fn_name is None:
                raise IrParseError("'}' outside a function", lineno)
            close_function(lineno)
            continue

        if fn_name is None:
            raise IrParseError("statement outside a function", lineno)

        if len(tokens) == 1 and line.endswith(":"):
            new_label = line[:-1]
            if not new_label:
                raise IrParseError("empty block label", lineno)
            if new_label in labels:
                raise IrParseError(f"duplicate block label {new_label!r}", lineno)
            close_block(lineno)
            labels.add(new_label)
            label = new_label
            block_line = lineno
            continue

        if label is None:
            raise IrParseError("instruction outside a block", lineno)
        if terminator is not None:
            raise IrParseError("instruction after block terminator", lineno)

        if tokens[0] == "phi":
            if body:
                raise IrParseError("phi after body instructions", lineno)
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise IrParseError("expected 'phi <arg-count>'", lineno)
            phi_args.append(int(tokens[1]))
            continue

        if tokens[0] in _BODY_KINDS:
            if len(tokens) != 1:
                raise IrParseError(f"unexpected arguments to {tokens[0]!r}", lineno)
            body.append(_BODY_KINDS[tokens[0]])
            continue

        if tokens[0] in _TERMINATOR_KINDS:
            kind = tokens[0]
            targets = tuple(tokens[1:])
            expected = {"br": 1, "condbr": 2, "ret": 0}
            if kind in expected and len(targets) != expected[kind]:
                raise IrParseError(f"{kind} expects {expected[kind]} target(s)", lineno)
            if kind == "switch" and not targets:
                raise IrParseError("switch expects at least one target", lineno)
            for target in targets:
                target_lines.setdefault(target, lineno)
            terminator = IrTerminator(kind, targets)
            continue

        raise IrParseError(f"unrecognized statement {line!r}", lineno)

    if fn_name is not None:
        raise IrParseError(f"unterminated function {fn_name!r}", fn_line)
    return IrModule(tuple(functions))


def extract_features(module: IrModule) -> FeatureVector:
    """Count features over all functions; averages are 0 when denominators are.

    Successor and predecessor counts follow terminator target multiplicity, so
    the edge count equals both the sum of successor counts and the sum of
    predecessor counts.
    """
    ft = [0.0] * FEATURE_COUNT
    total_phi_args = 0
    for function in module.functions:
        ft[23] += 1
        predecessors: Counter[str] = Counter()
        for block in function.blocks:
            for target in block.terminator.targets:
                predecessors[target] += 1
        for block in function.blocks:
            ft[0] += 1
            n_succ = len(block.terminator.targets)
            n_pred = predecessors[block.label]
            if n_succ == 1:
                ft[1] += 1
            elif n_succ == 2:
                ft[2] += 1
            elif n_succ > 2:
                ft[3] += 1
            if n_pred == 1:
                ft[4] += 1
            elif n_pred == 2:
                ft[5] += 1
            elif n_pred > 2:
                ft[6] += 1
            if n_pred == 1 and n_succ == 1:
                ft[7] += 1
            ft[8] += n_succ
            ft[9] += len(block.body) + 1
            ft[11] += len(block.phi_args)
            if block.phi_args:
                ft[12] += 1
            total_phi_args += sum(block.phi_args)
            if block.terminator.kind == "condbr":
                ft[14] += 1
            elif block.terminator.kind == "br":
                ft[15] += 1
            for kind in block.body:
                if kind == "load":
                    ft[16] += 1
                elif kind == "store":
                    ft[17] += 1
                elif kind == "int_arith":
                    ft[18] += 1
                elif kind == "float_arith":
                    ft[19] += 1
                elif kind == "call":
                    ft[20] += 1
                elif kind == "cmp":
                    ft[21] += 1
                elif kind == "addr":
                    ft[22] += 1
    ft[10] = ft[9] / ft[0] if ft[0] else 0.0
    ft[13] = total_phi_args / ft[11] if ft[11] else 0.0
    return FeatureVector(tuple(ft))


def cosine_distance(a: FeatureVector, b: FeatureVector) -> float:
    """1 minus the cosine of the angle between two non-negative vectors.

    Lies in [0, 1] for non-negative entries; raises DegenerateVectorError for
    an all-zero input rather than silently treating the pair as maximally
    distant.
    """
    norm_a = a.norm()
    norm_b = b.norm()
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateVectorError("cosine distance is undefined for an all-zero vector")
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return min(1.0, max(0.0, 1.0 - dot / (norm_a * norm_b)))

import math
from random import Random

import pytest

from phaseforge.irfeat import (
    DegenerateVectorError,
    FEATURE_COUNT,
    FeatureVector,
    IrParseError,
    cosine_distance,
    extract_features,
    parse_ir,
)


def vec(*values):
    padded = list(values) + [0.0] * (FEATURE_COUNT - len(values))
    return FeatureVector(tuple(padded))


def test_parse_minimal_function():
    module = parse_ir("func f {\nentry:\nret\n}\n")
    assert len(module.functions) == 1
    function = module.functions[0]
    assert function.name == "f"
    assert len(function.blocks) == 1
    block = function.blocks[0]
    assert block.label == "entry"
    assert block.body == ()
    assert block.terminator.kind == "ret"


def test_parse_undefined_branch_target():
    text = "func f {\na:\ncondbr a b\n}\n"
    with pytest.raises(IrParseError, match="undefined branch target 'b'"):
        parse_ir(text)


def test_parse_duplicate_label():
    text = "func f {\na:\nbr a\na:\nret\n}\n"
    with pytest.raises(IrParseError, match="duplicate block label"):
        parse_ir(text)


def test_parse_missing_terminator():
    with pytest.raises(IrParseError, match="no terminator"):
        parse_ir("func f {\na:\nload\nb:\nret\n}\n")


def test_parse_phi_must_precede_body():
    with pytest.raises(IrParseError, match="phi after body"):
        parse_ir("func f {\na:\nload\nphi 2\nret\n}\n")


def test_parse_instruction_after_terminator():
    with pytest.raises(IrParseError, match="after block terminator"):
        parse_ir("func f {\na:\nret\nload\n}\n")


def test_parse_duplicate_function_names():
    text = "func f {\na:\nret\n}\nfunc f {\nb:\nret\n}\n"
    with pytest.raises(IrParseError, match="duplicate function name"):
        parse_ir(text)


def test_parse_reports_line_numbers():
    with pytest.raises(IrParseError) as excinfo:
        parse_ir("func f {\nentry:\nbogus stuff\n}\n")
    assert excinfo.value.line == 3


def test_extract_empty_module():
    features = extract_features(parse_ir(""))
    assert all(v == 0.0 for v in features.values)


def test_extract_three_block_cfg():
    # A(condbr B C), B(br C), C(ret), no body instructions.
    text = "func f {\nA:\ncondbr B C\nB:\nbr C\nC:\nret\n}\n"
    ft = extract_features(parse_ir(text))
    assert ft[0] == 3   # blocks
    assert ft[1] == 1   # one successor: B
    assert ft[2] == 1   # two successors: A
    assert ft[3] == 0
    assert ft[4] == 1   # one predecessor: B
    assert ft[5] == 1   # two predecessors: C
    assert ft[6] == 0
    assert ft[8] == 3   # edges
    assert ft[9] == 3   # instructions (terminators only)
    assert ft[14] == 1  # conditional branches
    assert ft[15] == 1  # unconditional branches
    assert ft[23] == 1  # functions


def test_extract_instruction_mix():
    text = "func f {\nentry:\nload\nload\nstore\nfadd\nret\n}\n"
    ft = extract_features(parse_ir(text))
    assert ft[16] == 2  # loads
    assert ft[17] == 1  # stores
    assert ft[19] == 1  # float arithmetic
    assert ft[9] == 5   # instruction count includes the terminator
    assert ft[10] == 5  # average per block


def test_extract_phi_statistics():
    text = "func f {\na:\nbr b\nb:\nphi 2\nphi 4\nload\nret\n}\n"
    ft = extract_features(parse_ir(text))
    assert ft[11] == 2          # phi count
    assert ft[12] == 1          # blocks with phis
    assert ft[13] == 3.0        # average phi args
    assert ft[9] == 3           # phis excluded from the instruction count


def test_cosine_identical_vectors():
    v = vec(3.0, 1.0, 2.0)
    assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-12)


def test_cosine_orthogonal_vectors():
    assert cosine_distance(vec(1.0), vec(0.0, 1.0)) == pytest.approx(1.0)


def test_cosine_known_angle():
    d = cosine_distance(vec(1.0, 1.0), vec(1.0))
    assert d == pytest.approx(1.0 - 1.0 / math.sqrt(2), abs=1e-12)


def test_cosine_rejects_zero_vector():
    with pytest.raises(DegenerateVectorError):
        cosine_distance(vec(), vec(1.0))


def test_cosine_scale_invariance():
    rng = Random(5)
    for _ in range(50):
        a = vec(*(rng.random() for _ in range(8)))
        b = vec(*(rng.random() for _ in range(8)))
        scale = rng.uniform(0.001, 1000.0)
        scaled = FeatureVector(tuple(scale * v for v in a.values))
        assert cosine_distance(scaled, b) == pytest.approx(
            cosine_distance(a, b), abs=1e-12
        )


def random_ir_module(rng: Random) -> str:
    """Structurally valid random IR-subset text."""
    lines = []
    for f in range(rng.randint(1, 3)):
        lines.append(f"func fn{f} {{")
        n_blocks = rng.randint(1, 8)
        labels = [f"b{i}" for i in range(n_blocks)]
        for label in labels:
            lines.append(f"{label}:")
            for _ in range(rng.randint(0, 2)):
                lines.append(f"phi {rng.randint(1, 4)}")
            for _ in range(rng.randint(0, 5)):
                lines.append(rng.choice(
                    ["load", "store", "iadd", "fadd", "cmp", "call", "addr", "other"]
                ))
            kind = rng.choice(["br", "condbr", "switch", "ret"])
            if kind == "br":
                lines.append(f"br {rng.choice(labels)}")
            elif kind == "condbr":
                lines.append(f"condbr {rng.choice(labels)} {rng.choice(labels)}")
            elif kind == "switch":
                targets = " ".join(rng.choice(labels) for _ in range(rng.randint(1, 4)))
                lines.append(f"switch {targets}")
            else:
                lines.append("ret")
        lines.append("}")
    return "\n".join(lines) + "\n"


def degree_sums(module):
    succ_total = 0
    pred_total = 0
    for function in module.functions:
        preds = {}
        for block in function.blocks:
            succ_total += len(block.terminator.targets)
            for target in block.terminator.targets:
                preds[target] = preds.get(target, 0) + 1
        pred_total += sum(preds.values())
    return succ_total, pred_total


def test_random_modules_satisfy_degree_invariants():
    rng = Random(2024)
    for _ in range(300):
        module = parse_ir(random_ir_module(rng))
        ft = extract_features(module)
        succ_total, pred_total = degree_sums(module)
        assert ft[8] == succ_total == pred_total
        assert ft[1] + ft[2] + ft[3] <= ft[0]
        assert ft[4] + ft[5] + ft[6] <= ft[0]
        assert all(v >= 0 for v in ft.values)


def test_extraction_is_deterministic():
    rng = Random(77)
    text = random_ir_module(rng)
    assert extract_features(parse_ir(text)) == extract_features(parse_ir(text))

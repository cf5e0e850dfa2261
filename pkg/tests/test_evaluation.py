import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_pck
from spcnet.config import MPII_JOINT_GROUPS, REPORT_COLUMNS, ConfigError, DataError, PCKConfig
from spcnet.data import AnnotationRecord
from spcnet.evaluation import (
    EvalReport,
    default_curve_thresholds,
    emit_report,
    format_report,
    normalizer,
    parse_report_csv,
    pck_curve,
    pck_score,
    plot_curve,
    render_heatmap_overlay,
    write_curve_csv,
)
from spcnet.heatmap_codec import KeypointSet

TWO = {"A": (0,), "B": (1,)}


def gt(coords, vis=None, head=10.0, torso=(0, 1), offset=(0.0, 0.0)):
    coords = np.asarray(coords, float)
    vis = np.full(len(coords), 2) if vis is None else np.asarray(vis)
    ox, oy = offset
    # square head box whose diagonal is head / 0.6 -> PCKh normaliser = head
    side = head / 0.6 / np.sqrt(2)
    return AnnotationRecord("x.png", (0.0, 0.0), 1.0, KeypointSet(coords, vis, "image"),
                            head_box=(ox, oy, ox + side, oy + side), torso_pair=torso)


def pred(coords):
    coords = np.asarray(coords, float)
    return KeypointSet(coords, np.full(len(coords), 2), "image")


def test_below_threshold_is_correct():
    g = gt([[0, 0], [50, 0]])
    p = pred([[4, 0], [50, 0]])  # distance 0.4 * 10
    rep = pck_score([p], [g], PCKConfig(joint_groups=TWO))
    assert rep.per_group["A"] == 1.0


def test_exact_predictions_score_one():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 100, (16, 2))
    rep = pck_score([pred(coords)], [gt(coords)], PCKConfig())
    assert rep.total == 1.0 and all(v == 1.0 for v in rep.per_group.values())


def two_by_two():
    """2 samples x 2 joints at {0.1, 0.3, 0.6, 0.7} x normaliser."""
    gts = [gt([[0, 0], [100, 0]]), gt([[0, 0], [100, 0]])]
    preds = [pred([[1, 0], [100, 3]]), pred([[0, 6], [107, 0]])]
    return preds, gts


def test_two_by_two_fixture():
    preds, gts = two_by_two()
    rep = pck_score(preds, gts, PCKConfig(threshold=0.5, joint_groups=TWO))
    assert rep.total == 0.5
    assert rep.per_group == {"A": 0.5, "B": 0.5}


def test_absent_ground_truth_is_excluded():
    g = gt([[0, 0], [-1, -1]], vis=[2, 0])
    rep = pck_score([pred([[0, 0], [500, 500]])], [g], PCKConfig(joint_groups=TWO))
    assert rep.total == 1.0 and np.isnan(rep.per_group["B"])


def test_missing_head_box():
    g = AnnotationRecord("x.png", (0.0, 0.0), 1.0, KeypointSet([[0, 0]], [2], "image"))
    with pytest.raises(DataError):
        pck_score([pred([[0, 0]])], [g], PCKConfig(joint_groups={"A": (0,)}))


def test_torso_normaliser():
    g = gt([[0, 0], [0, 50]], torso=(0, 1))
    p = pred([[9.9, 0], [0, 60.1]])  # 0.2 * 50 = 10
    rep = pck_score([p], [g], PCKConfig(variant="pck", joint_groups=TWO))
    assert rep.threshold == 0.2 and rep.per_group == {"A": 1.0, "B": 0.0}


def test_total_is_ratio_not_mean_of_groups():
    g = [gt([[0, 0], [10, 0], [20, 0]])]
    p = [pred([[0, 0], [99, 0], [20, 0]])]
    rep = pck_score(p, g, PCKConfig(joint_groups={"A": (0,), "B": (1, 2)}))
    assert rep.total == pytest.approx(2 / 3)


def test_config_rejects_overlapping_groups():
    with pytest.raises(ConfigError):
        PCKConfig(joint_groups={"A": (0, 1), "B": (1,)})
    assert PCKConfig.parse("pck@0.2").variant == "pck"


def random_fixture(seed, n=6, samples=5):
    rng = np.random.default_rng(seed)
    gts, preds = [], []
    for _ in range(samples):
        c = rng.uniform(0, 100, (n, 2))
        vis = rng.choice([0, 1, 2], size=n, p=[0.2, 0.3, 0.5])
        vis[:2] = 2  # torso joints annotated
        c[vis == 0] = -1
        gts.append(gt(c, vis, head=float(rng.uniform(5, 30))))
        preds.append(pred(c + rng.normal(scale=8, size=c.shape)))
    return preds, gts


GROUPS6 = {"A": (0, 1), "B": (2, 3), "C": (4, 5)}


@pytest.mark.parametrize("variant", ["pckh", "pck"])
def test_matches_counting_oracle(variant):
    cfg = PCKConfig(variant=variant, joint_groups=GROUPS6)
    for seed in range(10):
        preds, gts = random_fixture(seed)
        norms = [normalizer(g, cfg) for g in gts]
        correct, counted = count_pck([p.coords for p in preds],
                                     [(g.joints.coords, g.joints.present) for g in gts], norms, cfg.threshold)
        assert pck_score(preds, gts, cfg).total == pytest.approx(correct / counted, abs=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-500, 500), st.floats(-500, 500))
def test_translation_invariance(seed, dx, dy):
    preds, gts = random_fixture(seed)
    cfg = PCKConfig(variant="pck", joint_groups=GROUPS6)
    shift = np.array([dx, dy])
    moved_g = [AnnotationRecord(g.image_ref, g.center, g.scale,
                                g.joints.replace(coords=np.where(g.joints.present[:, None],
                                                                 g.joints.coords + shift, -1.0)),
                                g.head_box, g.torso_pair) for g in gts]
    moved_p = [p.replace(coords=p.coords + shift) for p in preds]
    a, b = pck_score(preds, gts, cfg), pck_score(moved_p, moved_g, cfg)
    assert a.correct.tolist() == b.correct.tolist()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_scale_covariance(seed):
    preds, gts = random_fixture(seed)
    cfg = PCKConfig(joint_groups=GROUPS6)
    big_g = [AnnotationRecord(g.image_ref, g.center, g.scale,
                              g.joints.replace(coords=np.where(g.joints.present[:, None], 2 * g.joints.coords, -1.0)),
                              tuple(2 * v for v in g.head_box), g.torso_pair) for g in gts]
    big_p = [p.replace(coords=2 * p.coords) for p in preds]
    assert pck_score(preds, gts, cfg).correct.tolist() == pck_score(big_p, big_g, cfg).correct.tolist()


# -- curves --------------------------------------------------------------------

def test_default_curve_has_ten_rows():
    ts = default_curve_thresholds()
    assert len(ts) == 10 and ts[0] == 0.05 and ts[-1] == 0.5
    preds, gts = random_fixture(1)
    curve = pck_curve(preds, gts, PCKConfig(joint_groups=GROUPS6))
    assert curve.values.shape == (10, 4)
    assert len(list(curve.rows())) == 10


@pytest.mark.parametrize("seed", range(5))
def test_curve_is_monotone(seed):
    preds, gts = random_fixture(seed)
    curve = pck_curve(preds, gts, PCKConfig(joint_groups=GROUPS6), np.linspace(0, 1, 21))
    assert (np.diff(curve.values, axis=0) >= 0).all()


def test_threshold_zero_counts_exact_hits():
    g = gt([[0, 0], [10, 0]])
    p = pred([[0, 0], [10.001, 0]])
    curve = pck_curve([p], [g], PCKConfig(joint_groups=TWO), [0.0])
    assert curve.values[0].tolist() == [1.0, 0.0, 0.5]


def test_unsorted_thresholds_rejected():
    with pytest.raises(ConfigError):
        pck_curve([], [], PCKConfig(), [0.2, 0.1])


# -- reports -------------------------------------------------------------------

def full_report(value=1.0):
    return EvalReport({k: value for k in MPII_JOINT_GROUPS}, value, 1, 0.5, "pckh")


def test_report_all_ones_row():
    text = format_report(full_report(), "csv")
    header, row = text.strip().split("\n")
    assert header.split(",") == list(REPORT_COLUMNS)
    assert row.split(",") == ["100.0"] * 8


def test_column_order_matches_table_header():
    md = format_report(full_report(), "markdown", label="SPCNet")
    assert md.splitlines()[0] == "| Method | Head | Sho. | Elb. | Wri. | Hip | Knee | Ank. | Total |"


def test_csv_round_trip(tmp_path):
    rep = EvalReport({k: v for k, v in zip(MPII_JOINT_GROUPS, [0.9812, 0.5, 0.123, 0.0, 1.0, 0.77, 0.61])},
                     0.7001, 3, 0.5, "pckh")
    path = emit_report(rep, tmp_path / "r.csv")
    parsed = parse_report_csv(path.read_text())
    expected = {k: round(100 * v, 1) for k, v in rep.per_group.items()} | {"Total": 70.0}
    assert parsed == expected


def test_unmapped_group_rejected():
    with pytest.raises(ConfigError):
        format_report(EvalReport({"A": 1.0}, 1.0, 1, 0.5, "pckh"))
    with pytest.raises(ConfigError):
        format_report(full_report(), "html")


def test_curve_csv_and_plot(tmp_path):
    preds, gts = random_fixture(2)
    curve = pck_curve(preds, gts, PCKConfig(joint_groups=GROUPS6))
    text = write_curve_csv(curve, tmp_path / "c.csv").read_text().splitlines()
    assert text[0] == "threshold,A,B,C,Total" and len(text) == 11
    assert plot_curve(curve, tmp_path / "c.png").stat().st_size > 0


# -- overlays ------------------------------------------------------------------

def test_overlay_png(tmp_path):
    from PIL import Image

    hm = np.zeros((16, 64, 64), np.float32)
    hm[:, 20, 30] = 1.0
    out = render_heatmap_overlay(np.zeros((128, 96, 3), np.uint8), hm, tmp_path / "o" / "ov.png")
    img = np.asarray(Image.open(out))
    assert img.shape == (128, 96, 3)
    assert img.any()


def test_overlay_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        render_heatmap_overlay(np.zeros((8, 8, 3), np.uint8), np.zeros((1, 4, 4)), blocker / "ov.png")

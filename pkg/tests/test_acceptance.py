"""Acceptance gate: the ten release criteria, one pass/fail line each.

Criteria 1-6 are fast property checks. Criteria 7-10 share a set of
full-budget training runs (three seeds plus ablation baselines, a symmetric
object, and a determinism rerun) and together take on the order of an hour.
"""

import time
import types

import numpy as np
import pytest

from geopose import tensor as T
from geopose.config import ExperimentConfig
from geopose.data import gen_sample, get_model
from geopose.encoder import EncoderNet
from geopose.geometry import fps, knn, ppf, quat_to_rot, random_quat
from geopose.metrics import add, adds, write_report
from geopose.model import PoseNet, evaluate, train
from geopose.params import ParamStore
from geopose.pose_head import pose_loss
from geopose.tensor import Tensor

from conftest import ACCEPTANCE_LINES, fd_gradcheck


def record(num, desc, ok, detail=""):
    line = f"criterion {num:2d} ({desc}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


# -- criterion 1: gradient suite -------------------------------------------

def _op_cases(rng):
    a = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)
    gain = Tensor(rng.standard_normal(5) * 0.1 + 1.0, requires_grad=True)
    bias = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
    state = T.BatchNormState(5)
    idx2 = np.array([[0, 2], [3, 1], [2, 2]])
    c46 = Tensor(rng.standard_normal((4, 6)))
    c45 = Tensor(rng.standard_normal((4, 5)))
    c65 = Tensor(rng.standard_normal((6, 5)))
    return [
        ("add", lambda x, y: T.tsum((x + y) * (x + y)), [a(4, 5), a(4, 5)]),
        ("sub", lambda x, y: T.tsum((x - y) * (x - y)), [a(4, 5), a(5,)]),
        ("mul", lambda x, y: T.tsum(x * y * x), [a(3, 4), a(3, 4)]),
        ("div", lambda x, y: T.tsum(x / y), [a(3, 3), Tensor(rng.uniform(1, 2, (3, 3)), requires_grad=True)]),
        ("relu", lambda x: T.tsum(T.relu(x) * T.relu(x)), [a(6, 6)]),
        ("exp", lambda x: T.tsum(T.exp(x)), [a(4, 4)]),
        ("sqrt", lambda x: T.tsum(T.sqrt(x * x + Tensor(np.ones((3, 3))))), [a(3, 3)]),
        ("matmul", lambda x, y: T.tsum((x @ y) * (x @ y)), [a(4, 6), a(6, 3)]),
        ("transpose", lambda x: T.tsum(T.transpose(x) @ x), [a(5, 3)]),
        ("reshape", lambda x: T.tsum(T.reshape(x, (2, 6)) * T.reshape(x, (2, 6))), [a(3, 4)]),
        ("getitem", lambda x: T.tsum(T.getitem(x, (slice(1, 4), slice(0, 2)))), [a(5, 3)]),
        ("concat", lambda x, y: T.tsum(T.concat([x, y], axis=1) * T.concat([x, y], axis=1)),
         [a(3, 2), a(3, 4)]),
        ("gather_rows", lambda x: T.tsum(T.gather_rows(x, idx2) * T.gather_rows(x, idx2)),
         [a(4, 3)]),
        ("tsum_axis", lambda x: T.tsum(T.tsum(x, axis=0) * T.tsum(x, axis=0)), [a(4, 5)]),
        ("tmean", lambda x: T.tmean(x * x), [a(6, 2)]),
        ("amax", lambda x: T.tsum(T.amax(x, axis=1)), [a(5, 7)]),
        ("pool_max", lambda x: T.tsum(T.pool(T.reshape(x, (2, 3, 4)), kind="max", axis=1)),
         [a(6, 4)]),
        ("pool_mean", lambda x: T.tsum(T.pool(T.reshape(x, (2, 3, 4)), kind="mean", axis=1)),
         [a(6, 4)]),
        ("softmax", lambda x: T.tsum(T.softmax(x) * c46), [a(4, 6)]),
        ("layer_norm", lambda x, g, b: T.tsum(T.layer_norm(x, g, b) * c45),
         [a(4, 5), gain, bias]),
        ("batch_norm", lambda x, g, b: T.tsum(
            T.batch_norm(x, g, b, state, train=True) * c65),
         [a(6, 5), gain, bias]),
    ]


def _tiny_net():
    cfg = ExperimentConfig(seed=0, head_widths=[16, 8])
    cfg.embed.n_initial_centers = 8
    cfg.embed.k_neighbors = [4, 3]
    cfg.embed.widths = [16, 16]
    cfg.embed.downsample_factors = [1, 1]
    cfg.encoder.layers = 1
    cfg.encoder.heads = 2
    cfg.encoder.d_in = 16
    cfg.encoder.k_f = 3
    cfg.encoder.ff_width = 32
    cfg.train.n_loss_points = 16
    cfg.validate()
    return PoseNet(cfg)


def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_op = 0.0
    for name, fn, tensors in _op_cases(rng):
        err = fd_gradcheck(fn, tensors, h=1e-6)
        worst_op = max(worst_op, err)
        assert err < 1e-4, f"{name}: {err}"

    # full network: 64 input points, 8 centers, d_in=16, one encoder layer
    net = _tiny_net()
    model = get_model("lbracket")
    from geopose.config import SceneConfig
    scene = SceneConfig(noise_sigma=0.002, cull_fraction=0.3, occluder_fraction=0.1,
                        box_extent=[0.2, 0.2, 0.2])
    sample = gen_sample(model, scene, 0)
    sample.cloud = sample.cloud[:64]
    sample.normals = sample.normals[:64]
    plan, bary = net.plan_for(sample)
    params = [t for _, t in sorted(net.params.items()) if t.requires_grad]

    def full_loss(*_):
        q, t_hat = net.forward(sample.cloud, sample.normals, plan=plan, bary=bary)
        return pose_loss(q, t_hat, sample.gt, model.vertices, False, 16)

    err = fd_gradcheck(full_loss, params, h=1e-6, seed=1, max_entries=2)
    elapsed = time.perf_counter() - t0
    ok = err < 1e-4 and elapsed < 60
    record(1, "gradient suite", ok,
           f"op max rel err {worst_op:.2e}, network {err:.2e}, {elapsed:.1f}s")


# -- criterion 2: geometry oracles -----------------------------------------

def _fps_oracle(pts, n, seed):
    m = len(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    chosen = [seed % m]
    for _ in range(n - 1):
        mind = d[:, chosen].min(axis=1)
        chosen.append(int(np.argmax(mind)))
    return chosen


def test_criterion_2_geometry_oracles():
    rng = np.random.default_rng(2)
    fps_bad = 0
    for _ in range(200):
        m = int(rng.integers(2, 65))
        pts = rng.standard_normal((m, 3))
        n = int(rng.integers(1, m + 1))
        seed = int(rng.integers(0, 1000))
        if list(fps(pts, n, seed)) != _fps_oracle(pts, n, seed):
            fps_bad += 1
    knn_bad = 0
    for _ in range(200):
        m = int(rng.integers(2, 257))
        pts = rng.standard_normal((m, 3))
        q = rng.standard_normal((int(rng.integers(1, 17)), 3))
        k = int(rng.integers(1, m + 1))
        d2 = ((q[:, None] - pts[None]) ** 2).sum(axis=2)
        expect = np.argsort(d2, axis=1, kind="stable")[:, :k]
        if not np.array_equal(knn(pts, q, k), expect):
            knn_bad += 1
    record(2, "FPS/K-NN oracles", fps_bad == 0 and knn_bad == 0,
           f"fps mismatches {fps_bad}/200, knn mismatches {knn_bad}/200")


# -- criterion 3: PPF rigid invariance -------------------------------------

def test_criterion_3_ppf_invariance():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        p_i, p_j = rng.standard_normal((2, 3))
        n_i, n_j = rng.standard_normal((2, 3))
        n_i /= np.linalg.norm(n_i)
        n_j /= np.linalg.norm(n_j)
        R = quat_to_rot(random_quat(rng))
        t = rng.uniform(-2, 2, 3)
        base = ppf(p_i, n_i, p_j, n_j)
        moved = ppf(R @ p_i + t, R @ n_i, R @ p_j + t, R @ n_j)
        worst = max(worst, float(np.abs(base - moved).max()))
    record(3, "PPF rigid invariance", worst < 1e-9, f"max deviation {worst:.2e}")


# -- criterion 4: SO(3) suite ----------------------------------------------

def test_criterion_4_so3_suite():
    rng = np.random.default_rng(4)
    worst_orth = worst_det = 0.0
    sign_exact = True
    for _ in range(1000):
        q = random_quat(rng)
        R = quat_to_rot(q)
        worst_orth = max(worst_orth, float(np.abs(R.T @ R - np.eye(3)).max()))
        worst_det = max(worst_det, abs(float(np.linalg.det(R)) - 1))
        sign_exact = sign_exact and np.array_equal(R, quat_to_rot(-q))
    ident_exact = np.array_equal(quat_to_rot([0, 0, 0, 1]), np.eye(3))
    s = np.sqrt(0.5)
    z_quarter = quat_to_rot([0, 0, s, s])
    z_dev = float(np.abs(z_quarter - np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])).max())
    ok = (worst_orth < 1e-12 and worst_det < 1e-12 and sign_exact
          and ident_exact and z_dev < 1e-15)
    record(4, "SO(3) suite", ok,
           f"orth {worst_orth:.2e}, det {worst_det:.2e}, R(q)=R(-q) {sign_exact}, "
           f"z-quarter dev {z_dev:.1e}")


# -- criterion 5: metric correctness ---------------------------------------

def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(5)
    worst = 0.0
    order_ok = True
    for _ in range(100):
        model = types.SimpleNamespace(vertices=rng.standard_normal((30, 3)) * 0.05)
        pred = types.SimpleNamespace(R=quat_to_rot(random_quat(rng)),
                                     t=rng.uniform(-0.2, 0.2, 3))
        gt = types.SimpleNamespace(R=quat_to_rot(random_quat(rng)),
                                   t=rng.uniform(-0.2, 0.2, 3))
        pv = model.vertices @ pred.R.T + pred.t
        gv = model.vertices @ gt.R.T + gt.t
        naive_add = float(np.mean([np.linalg.norm(a - b) for a, b in zip(pv, gv)]))
        naive_adds = float(np.mean([min(np.linalg.norm(a - b) for b in gv) for a in pv]))
        va, vs = add(pred, gt, model), adds(pred, gt, model)
        worst = max(worst, abs(va - naive_add), abs(vs - naive_adds))
        order_ok = order_ok and vs <= va + 1e-12
    # symmetric two-point hand case: a half turn swaps the two vertices
    radius = 0.04
    two = types.SimpleNamespace(vertices=np.array([[radius, 0, 0], [-radius, 0, 0]]))
    ident = types.SimpleNamespace(R=np.eye(3), t=np.zeros(3))
    half_turn = types.SimpleNamespace(R=np.diag([-1.0, -1.0, 1.0]), t=np.zeros(3))
    hand_ok = (adds(half_turn, ident, two) < 1e-15
               and abs(add(half_turn, ident, two) - 2 * radius) < 1e-15)
    record(5, "ADD/ADD-S oracles", worst < 1e-12 and order_ok and hand_ok,
           f"max oracle dev {worst:.2e}, adds<=add {order_ok}, hand case {hand_ok}")


# -- criterion 6: encoder invariants ---------------------------------------

def test_criterion_6_encoder_invariants():
    from geopose.config import EncoderConfig
    from geopose.encoder import global_pool
    rng = np.random.default_rng(6)
    cfg = EncoderConfig(layers=2, heads=2, d_in=8, k_f=3, ff_width=16)
    net = EncoderNet(cfg, ParamStore(seed=6))
    worst_equiv = worst_pool = worst_rows = 0.0
    for _ in range(50):
        x = rng.standard_normal((12, 8))
        perm = rng.permutation(12)
        weights = []
        y = net.encode(Tensor(x), collect_attn=weights)
        yp = net.encode(Tensor(x[perm]))
        worst_equiv = max(worst_equiv, float(np.abs(yp.data - y.data[perm]).max()))
        worst_pool = max(worst_pool, float(np.abs(
            global_pool(yp).data - global_pool(y).data).max()))
        for w in weights:
            worst_rows = max(worst_rows, float(np.abs(w.sum(axis=1) - 1).max()))
    ok = worst_equiv < 1e-12 and worst_pool < 1e-12 and worst_rows < 1e-12
    record(6, "encoder invariants", ok,
           f"equivariance {worst_equiv:.2e}, pooled {worst_pool:.2e}, rows {worst_rows:.2e}")


# -- criteria 7-10: full-budget training runs ------------------------------

SEEDS = (0, 1, 2)
WALL_BUDGET_S = 900.0


def _desk_dataset(cfg):
    model = get_model(cfg.model)
    samples = [gen_sample(model, cfg.scene, i) for i in range(cfg.scene.samples)]
    return model, samples[:256], samples[256:]


def _run(cfg, train_s, val_s, model):
    t0 = time.perf_counter()
    net, history = train(cfg, train_s)
    wall = time.perf_counter() - t0
    return {
        "net": net,
        "history": history,
        "wall": wall,
        "train_report": evaluate(net, train_s, model),
        "val_report": evaluate(net, val_s, model),
    }


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = {}
    for seed in SEEDS:
        cfg = ExperimentConfig(seed=seed)
        cfg.scene.seed = seed
        model, train_s, val_s = _desk_dataset(cfg)
        out[seed] = {"full": _run(cfg, train_s, val_s, model)}
        base_cfg = ExperimentConfig.from_json(cfg.to_json())
        base_cfg.ablation.gcn_block = "plainconv"
        base_cfg.ablation.geometry_aware = "off"
        out[seed]["baseline"] = _run(base_cfg, train_s, val_s, model)
    out["dir"] = tmp_path_factory.mktemp("acceptance")
    return out


def test_criterion_7_desk_scale_learning(desk_runs):
    details = []
    passing = 0
    wall_ok = True
    for seed in SEEDS:
        r = desk_runs[seed]["full"]
        tr = r["train_report"].primary_01d_accuracy
        va = r["val_report"].primary_01d_accuracy
        wall_ok = wall_ok and r["wall"] < WALL_BUDGET_S
        hit = tr >= 0.90 and va >= 0.60
        passing += hit
        details.append(f"seed {seed}: train {tr:.3f} val {va:.3f} {r['wall']:.0f}s")
    record(7, "desk-scale learning", passing >= 2 and wall_ok,
           "; ".join(details) + f"; {passing}/3 seeds")


def test_criterion_8_ablation_direction(desk_runs):
    wins = 0
    details = []
    rows = ["gcn_block,geometry_aware,seed,add_01d_accuracy"]
    for seed in SEEDS:
        full = desk_runs[seed]["full"]["val_report"].primary_01d_accuracy
        base = desk_runs[seed]["baseline"]["val_report"].primary_01d_accuracy
        assert 0.0 <= full <= 1.0 and 0.0 <= base <= 1.0
        wins += full >= base
        details.append(f"seed {seed}: full {full:.3f} vs baseline {base:.3f}")
        rows.append(f"gcn,on,{seed},{full!r}")
        rows.append(f"plainconv,off,{seed},{base!r}")
    csv_path = desk_runs["dir"] / "ablation.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    record(8, "ablation direction", wins >= 2,
           "; ".join(details) + f"; table {csv_path}")


def test_criterion_9_symmetric_object(desk_runs):
    cfg = ExperimentConfig(seed=0, model="eggboxoid")
    model, train_s, val_s = _desk_dataset(cfg)
    r = _run(cfg, train_s, val_s, model)
    report = r["val_report"]
    write_report(report, desk_runs["dir"] / "eggboxoid")
    ok = (report.adds_01d_accuracy >= 0.60
          and report.adds_01d_accuracy > report.add_01d_accuracy
          and r["wall"] < WALL_BUDGET_S)
    record(9, "symmetric handling", ok,
           f"val adds-0.1d {report.adds_01d_accuracy:.3f}, add-0.1d "
           f"{report.add_01d_accuracy:.3f}, {r['wall']:.0f}s")


def test_criterion_10_determinism(desk_runs):
    out = desk_runs["dir"]
    cfg = ExperimentConfig(seed=0)
    model, train_s, val_s = _desk_dataset(cfg)
    first = desk_runs[0]["full"]
    rerun = _run(cfg, train_s, val_s, model)
    first["net"].params.save(out / "ck_a.gpck")
    rerun["net"].params.save(out / "ck_b.gpck")
    write_report(first["val_report"], out / "rep_a")
    write_report(rerun["val_report"], out / "rep_b")
    ck_same = (out / "ck_a.gpck").read_bytes() == (out / "ck_b.gpck").read_bytes()
    mj_same = ((out / "rep_a" / "metrics.json").read_bytes()
               == (out / "rep_b" / "metrics.json").read_bytes())
    hist_same = first["history"] == rerun["history"]
    record(10, "determinism", ck_same and mj_same and hist_same,
           f"checkpoint identical {ck_same}, metrics identical {mj_same}, "
           f"loss history identical {hist_same}")

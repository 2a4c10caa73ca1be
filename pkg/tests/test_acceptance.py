"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Heavy statistical criteria share one 10^4-instance stability run per solver
through a module-level cache.  All tolerances are asserted exactly as
stated; nothing is deferred to calibration.
"""

import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from scanpose import enumeration as en
from scanpose import robust, synthetic as syn
from scanpose import tensors as tz
from scanpose.exceptions import ScanposeError
from scanpose.geometry import (
    E2,
    CameraPose,
    Line3D,
    ReducedCamera,
    ScanlineObservation,
    project_line_to_scanline,
    random_rotation,
    reduced_camera_matrix,
)
from scanpose.solvers import MIN_CAMERAS, MIN_LINES, SOLVERS

STABILITY_TRIALS = 10_000
RECOVERY_TRIALS = 1_000
SOLVER_BUDGET_S = 300.0

_cache: dict = {}


def _report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")


def stability_run(solver_id: str):
    """10^4 noise-free trials; returns dict with error arrays, failure
    count, wall time, and (for d37) the ground-truth recovery count over
    the first 1000 trials."""
    if solver_id in _cache:
        return _cache[solver_id]
    rots, transs, terrs = [], [], []
    fails = 0
    recovered = 0
    t0 = time.time()
    for trial in range(STABILITY_TRIALS):
        res = syn.run_trial(solver_id, trial)
        if res is None:
            fails += 1
            continue
        rot, trans, terr, _count = res
        rots.append(rot)
        transs.append(trans)
        terrs.append(terr)
        if trial < RECOVERY_TRIALS and not np.isnan(rot) and rot < 1e-6:
            recovered += 1
    out = {
        "rot": np.asarray(rots), "trans": np.asarray(transs),
        "terr": np.asarray(terrs), "fails": fails,
        "runtime": time.time() - t0, "recovered": recovered,
    }
    _cache[solver_id] = out
    return out


# ---------------------------------------------------------------------------
# Criterion 1: balanced-problem table reproduction
# ---------------------------------------------------------------------------

def test_criterion_1_table_reproduction():
    expected = {
        ("A", 5, 23), ("A", 21, 7), ("B", 3, 7), ("B", 4, 6),
        ("C", 5, 15), ("C", 15, 5), ("D", 3, 7), ("D", 4, 5), ("D", 6, 4),
        ("E", 3, 5), ("E", 4, 4),
    }
    t0 = time.time()
    rows = en.table1()
    got = {(s.setting, s.cameras_m, s.lines_n) for s, _deg in rows}
    verdicts = [en.minimality_check(s, seed=1) for s, _deg in rows]
    elapsed = time.time() - t0
    ok = (got == expected and all(v.minimal for v in verdicts)
          and elapsed < 10.0)
    _report("1 (table reproduction)", ok,
            f"{len(got)} rows, all minimal={all(v.minimal for v in verdicts)}, "
            f"{elapsed:.1f}s")
    assert got == expected
    assert all(v.minimal for v in verdicts)
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# Criterion 2: solver stability over 10^4 noise-free instances
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("solver_id", ["b37", "e35", "e44", "d37"])
def test_criterion_2_stability(solver_id):
    stats = stability_run(solver_id)
    med_t = np.median(stats["terr"])
    p99_t = np.quantile(stats["terr"], 0.99)
    lines = [f"tensor med {med_t:.2e} p99 {p99_t:.2e}"]
    ok = med_t < 1e-7 and p99_t < 1e-4
    if solver_id != "b37":
        med_r, p99_r = np.median(stats["rot"]), np.quantile(stats["rot"], 0.99)
        med_c, p99_c = (np.median(stats["trans"]),
                        np.quantile(stats["trans"], 0.99))
        lines.append(f"rot med {med_r:.2e} p99 {p99_r:.2e}")
        lines.append(f"trans med {med_c:.2e} p99 {p99_c:.2e}")
        ok = ok and med_r < 1e-7 and p99_r < 1e-4
        ok = ok and med_c < 1e-7 and p99_c < 1e-4
    if solver_id == "d37":
        rate = stats["recovered"] / RECOVERY_TRIALS
        lines.append(f"recovery {rate:.1%}")
        ok = ok and rate >= 0.95
    runtime_ok = stats["runtime"] <= SOLVER_BUDGET_S
    lines.append(f"runtime {stats['runtime']:.0f}s"
                 + ("" if runtime_ok else f" (budget {SOLVER_BUDGET_S:.0f}s)"))
    _report(f"2 ({solver_id} stability)", ok and runtime_ok,
            "; ".join(lines))
    assert med_t < 1e-7 and p99_t < 1e-4
    if solver_id != "b37":
        assert med_r < 1e-7 and p99_r < 1e-4
        assert med_c < 1e-7 and p99_c < 1e-4
    if solver_id == "d37":
        assert stats["recovered"] / RECOVERY_TRIALS >= 0.95
    assert stats["runtime"] <= SOLVER_BUDGET_S


# ---------------------------------------------------------------------------
# Criterion 3: exact solution counts on generic instances
# ---------------------------------------------------------------------------

def test_criterion_3_solution_counts():
    bad = 0
    for seed in range(100):
        n_b = len(SOLVERS["b37"](
            syn.sample_scene(syn.solver_scene_config("b37", seed)).observations
        ).canonical)
        n_e3 = len(SOLVERS["e35"](
            syn.sample_scene(syn.solver_scene_config("e35", seed)).observations
        ).poses)
        n_e4 = len(SOLVERS["e44"](
            syn.sample_scene(syn.solver_scene_config("e44", seed)).observations
        ).poses)
        bad += (n_b != 2) + (n_e3 != 16) + (n_e4 != 32)
    _report("3 (solution counts)", bad == 0,
            f"violations {bad}/300 over 100 instances x 3 solvers")
    assert bad == 0


# ---------------------------------------------------------------------------
# Criterion 4: eight-fold reduced-camera decomposition
# ---------------------------------------------------------------------------

@pytest.mark.xfail(
    strict=True,
    reason="spec defect: the count of eight decompositions is the algebraic "
           "(complex) count; for every real 2x3 matrix the larger root of "
           "the scale quadratic violates the unit-row bound, so exactly "
           "four decompositions are real (verified analytically and by "
           "blind numerical solving; see the decisions ledger)")
def test_criterion_4_eightfold_decomposition_as_stated():
    from scanpose.geometry import decompose_reduced_camera

    rng = np.random.default_rng(42)
    eightfold = 0
    for _ in range(100):
        cam = ReducedCamera(a=rng.standard_normal((2, 3)))
        sols = decompose_reduced_camera(cam)
        if len(sols) == 8 and all(
                np.abs(reduced_camera_matrix(
                    CameraPose(rotation=r, center=[cx, 0, cz]))
                    - s * cam.a).max() < 1e-8
                for r, cx, cz, s in sols):
            eightfold += 1
    _report("4 (eight-fold decomposition, as stated)", eightfold >= 95,
            f"{eightfold}/100 matrices with exactly 8 real decompositions")
    assert eightfold >= 95


def test_criterion_4_decomposition_actual_behavior():
    """Companion: the honest real-solution count is four, every returned
    decomposition recomposes within 1e-8, and the source pose is found."""
    from scanpose.geometry import decompose_reduced_camera

    rng = np.random.default_rng(42)
    fourfold = 0
    for _ in range(100):
        cam = ReducedCamera(a=rng.standard_normal((2, 3)))
        sols = decompose_reduced_camera(cam)
        recompose_ok = all(
            np.abs(reduced_camera_matrix(
                CameraPose(rotation=r, center=[cx, 0, cz]))
                - s * cam.a).max() < 1e-8
            for r, cx, cz, s in sols)
        if len(sols) == 4 and recompose_ok:
            fourfold += 1
    _report("4 (decomposition, honest count)", fourfold >= 95,
            f"{fourfold}/100 matrices with exactly 4 real decompositions, "
            "all recomposing within 1e-8")
    assert fourfold >= 95


# ---------------------------------------------------------------------------
# Criterion 5: calibrated constraint dimensions
# ---------------------------------------------------------------------------

def test_criterion_5_constraint_dimensions():
    c3 = tz.derive_calibrated_constraints(3)
    c4 = tz.derive_calibrated_constraints(4)
    rng = np.random.default_rng(7)
    worst3 = 0.0
    for _ in range(100):
        th = rng.uniform(-np.pi, np.pi, 3)
        cams = [np.hstack([
            np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]),
            rng.standard_normal((2, 1))]) for t in th]
        v = tz.trifocal_from_cameras(*cams).t.ravel()
        worst3 = max(worst3, max(abs(c @ v) for c in c3))
    worst4 = 0.0
    for _ in range(100):
        pts = [np.append(rng.standard_normal(2), 1.0) for _ in range(4)]
        v = tz.dual_quadrifocal_from_points(pts).t.ravel()
        worst4 = max(worst4, max(abs(c @ v) for c in c4))
    ok = len(c3) == 2 and len(c4) == 11 and worst3 < 1e-9 and worst4 < 1e-9
    _report("5 (constraint dimensions)", ok,
            f"dims ({len(c3)}, {len(c4)}); worst residuals "
            f"{worst3:.1e}, {worst4:.1e}")
    assert len(c3) == 2 and len(c4) == 11
    assert worst3 < 1e-9 and worst4 < 1e-9


# ---------------------------------------------------------------------------
# Criterion 6: noise-trend reproduction
# ---------------------------------------------------------------------------

SIGMA_GRID = [0.0, 0.5, 1.0, 1.5, 2.0]
NOISY_TRIALS = 500


_SOLVER_TAG = {"b37": 1, "e35": 2, "e44": 3, "d37": 4}


def _noise_cell(solver_id, sigma_p, trials):
    rots, terrs = [], []
    fails = 0
    noise = syn.NoiseConfig(sigma_p=sigma_p, focal=1000.0, sigma_v=0.0)
    for t in range(trials):
        ss = np.random.SeedSequence((4180, _SOLVER_TAG[solver_id],
                                     int(sigma_p * 10), t))
        s1, s2 = ss.generate_state(2)
        res = syn.run_trial(solver_id, int(s1), noise, int(s2))
        if res is None:
            fails += 1
            continue
        rot, _trans, terr, _ = res
        rots.append(rot)
        terrs.append(terr)
    return (np.nanmedian(rots) if rots else np.nan,
            np.nanmedian(terrs) if terrs else np.nan,
            fails / trials)


@pytest.mark.parametrize("solver_id", ["b37", "e35", "e44", "d37"])
def test_criterion_6_noise_trend(solver_id):
    stats = stability_run(solver_id)
    med_rot0 = (np.median(stats["rot"]) if solver_id != "b37" else np.nan)
    med_terr0 = np.median(stats["terr"])
    fail0 = stats["fails"] / STABILITY_TRIALS
    med_rot = [med_rot0]
    med_terr = [med_terr0]
    fail_last = 0.0
    for sp in SIGMA_GRID[1:]:
        r, t, f = _noise_cell(solver_id, sp, NOISY_TRIALS)
        med_rot.append(r)
        med_terr.append(t)
        fail_last = f
    series = med_terr if solver_id == "b37" else med_rot
    rho = spearmanr(SIGMA_GRID, series).statistic
    ok = rho > 0.9 and fail0 < 0.001
    detail = (f"medians {['%.2e' % v for v in series]}; spearman {rho:.3f}; "
              f"noise-free fail {fail0:.2%}")
    if solver_id == "d37":
        ok = ok and fail_last < 0.15
        detail += f"; fail@2px {fail_last:.1%}"
    _report(f"6 ({solver_id} noise trend)", ok, detail)
    assert rho > 0.9
    assert fail0 < 0.001
    if solver_id == "d37":
        assert fail_last < 0.15


# ---------------------------------------------------------------------------
# Criterion 7: degeneracy behavior
# ---------------------------------------------------------------------------

def _constructed_scene(solver_id, seed, coincident=False,
                       collinear_centers=False, coplanar=0):
    m, n = MIN_CAMERAS[solver_id], MIN_LINES[solver_id]
    setting = syn.SETTING_OF_SOLVER[solver_id]
    rng = np.random.default_rng(seed)
    ys = rng.uniform(-1, 1, m)
    rots = [random_rotation(rng) for _ in range(m)]
    if collinear_centers:
        d = rng.standard_normal(3)
        cents = [k * 0.7 * d for k in range(m)]
    else:
        cents = [rng.standard_normal(3) for _ in range(m)]
    if coincident:
        cents[1] = cents[0].copy()
    if setting == "D":
        dirv = np.array([rng.standard_normal(), 1.0, rng.standard_normal()])
        dirv /= np.linalg.norm(dirv)
    else:
        dirv = E2.copy()
    lines = []
    if coplanar:
        t2 = rng.standard_normal(2)
        for k in range(coplanar):
            lines.append(Line3D(
                point_l0=np.array([0.1 + 0.5 * k * t2[0], 0.0,
                                   5 + 0.5 * k * t2[1]]),
                direction_ld=dirv.copy()))
    while len(lines) < n:
        lines.append(Line3D(
            point_l0=np.array([rng.standard_normal(), 0.0,
                               rng.standard_normal() + 5]),
            direction_ld=dirv.copy()))
    poses = [CameraPose(rotation=r, center=c, scanline_y=float(y))
             for r, c, y in zip(rots, cents, ys)]
    obs = []
    for i in range(m):
        row = []
        for j in range(n):
            x = project_line_to_scanline(poses[i], lines[j], ys[i])
            row.append(ScanlineObservation(i, j, x, float(ys[i]),
                                           gravity=rots[i] @ E2))
        obs.append(row)
    return obs


def test_criterion_7_degeneracy():
    per_case = 100
    results = {}
    for solver_id in ("b37", "e35", "e44", "d37"):
        cop = (MIN_LINES[solver_id]
               if solver_id in ("e35", "e44") else 5)
        for case, kwargs in [("coincident", dict(coincident=True)),
                             ("coplanar", dict(coplanar=cop))]:
            errs = 0
            for seed in range(per_case):
                try:
                    obs = _constructed_scene(solver_id, seed, **kwargs)
                    SOLVERS[solver_id](obs)
                except ScanposeError:
                    errs += 1
            results[(solver_id, case)] = errs
        solved = 0
        for seed in range(per_case):
            try:
                obs = _constructed_scene(solver_id, seed,
                                         collinear_centers=True)
                SOLVERS[solver_id](obs)
                solved += 1
            except ScanposeError:
                pass
        results[(solver_id, "collinear")] = solved
    ok = all(results[(s, c)] == per_case
             for s in ("b37", "e35", "e44", "d37")
             for c in ("coincident", "coplanar", "collinear"))
    _report("7 (degeneracy behavior)", ok,
            "; ".join(f"{s}/{c}={v}" for (s, c), v in results.items()))
    for key, value in results.items():
        assert value == per_case, key


# ---------------------------------------------------------------------------
# Criterion 8: RANSAC robustness with gross outliers
# ---------------------------------------------------------------------------

RANSAC_RUNS = 200
RANSAC_ITERS = 1000


def _outlier_run(run):
    n = 20
    inst = syn.sample_front_scene(syn.SceneConfig("E", 3, n, seed=8000 + run))
    rng = np.random.default_rng(9000 + run)
    obs = [[o for o in row] for row in inst.observations]
    bad = rng.choice(n, size=6, replace=False)
    for j in bad:
        for i in range(3):
            o = obs[i][j]
            obs[i][j] = ScanlineObservation(
                camera_index=i, line_index=j, x=rng.uniform(-1, 1),
                scanline_y=o.scanline_y, gravity=o.gravity)
    config = robust.RansacConfig(iterations=RANSAC_ITERS,
                                 inlier_threshold=1.0, focal=1000.0,
                                 seed=run, solver_id="e35")
    model = robust.ransac(obs, config)
    gt_canon, _ = syn.canonicalize_solution(inst.gt_poses, inst.gt_lines)
    if not model.poses:
        return np.pi, model
    cand, _ = syn.canonicalize_solution(
        model.poses, [Line3D(point_l0=np.zeros(3), direction_ld=E2)])
    from scanpose.geometry import pose_errors

    rep = pose_errors(cand, gt_canon)
    return max(rep.rot_err, rep.trans_err), model


def test_criterion_8_ransac_robustness():
    good = 0
    sample_models = {}
    for run in range(RANSAC_RUNS):
        err, model = _outlier_run(run)
        good += err < np.radians(5.0)
        if run < 3:
            sample_models[run] = (model.score, model.inlier_mask.copy(),
                                  model.iteration)
    # deterministic rerun equality on a few runs
    rerun_equal = True
    for run, (score, mask, it) in sample_models.items():
        _, model = _outlier_run(run)
        rerun_equal &= (model.score == score
                        and np.array_equal(model.inlier_mask, mask)
                        and model.iteration == it)
    rate = good / RANSAC_RUNS
    ok = rate >= 0.80 and rerun_equal
    _report("8 (ransac robustness)", ok,
            f"pose<5deg in {rate:.1%} of {RANSAC_RUNS} runs; "
            f"rerun equality {rerun_equal}")
    assert rate >= 0.80
    assert rerun_equal


# ---------------------------------------------------------------------------
# Criterion 9: ingestion round trip and pseudo ground truth
# ---------------------------------------------------------------------------

def test_criterion_9_ingestion_and_pseudo_gt(tmp_path):
    from scanpose import files

    worst = 0.0
    for setting, m, n in [("E", 3, 5), ("D", 3, 7), ("B", 3, 7)]:
        inst = syn.sample_scene(syn.SceneConfig(setting, m, n, seed=17))
        path = tmp_path / f"{setting}.json"
        files.save_observations(path, files.instance_to_file(inst))
        loaded, pseudo = files.load_observations(path)
        for ra, rb in zip(inst.observations, loaded):
            for oa, ob in zip(ra, rb):
                worst = max(worst, abs(oa.x - ob.x),
                            abs(oa.scanline_y - ob.scanline_y))
        for pa, pb in zip(inst.gt_poses, pseudo):
            worst = max(worst, np.abs(pa.rotation - pb.rotation).max(),
                        np.abs(pa.center - pb.center).max())
    # interpolation formula exactness at characteristic scanlines
    rng = np.random.default_rng(1)
    from scanpose.geometry import interpolate_scanline_pose

    first = CameraPose(rotation=random_rotation(rng),
                       center=rng.standard_normal(3))
    middle = CameraPose(rotation=random_rotation(rng),
                        center=rng.standard_normal(3))
    h = 480.0
    mid = interpolate_scanline_pose(first, middle, h / 2, h)
    top = interpolate_scanline_pose(first, middle, 0.0, h)
    worst = max(worst, np.abs(mid.rotation - middle.rotation).max(),
                np.abs(mid.center - middle.center).max(),
                np.abs(top.rotation - first.rotation).max(),
                np.abs(top.center - first.center).max())
    quarter = interpolate_scanline_pose(
        CameraPose(rotation=np.eye(3), center=[1.0, 0, 0]),
        CameraPose(rotation=np.eye(3), center=[0.0, 0, 0]), 120.0, h)
    worst = max(worst, np.abs(quarter.center - [0.5, 0, 0]).max())
    ok = worst < 1e-12
    _report("9 (ingestion + pseudo-GT)", ok, f"worst deviation {worst:.1e}")
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# Module invariant (solvers): gravity-noise robustness at sigma_v = 1 degree
# ---------------------------------------------------------------------------

def test_invariant_gravity_noise_median():
    errs = []
    fails = 0
    for seed in range(STABILITY_TRIALS):
        inst = syn.sample_scene(syn.solver_scene_config("e35", 50_000 + seed))
        noisy = syn.add_noise(
            inst, syn.NoiseConfig(sigma_p=0.0, sigma_v=np.radians(1.0)),
            seed=seed)
        try:
            out = SOLVERS["e35"](noisy.observations)
        except ScanposeError:
            fails += 1
            continue
        rot, _, _ = syn.best_candidate_errors(out, inst)
        errs.append(rot)
    med = np.degrees(np.median(errs))
    ok = med < 5.0
    _report("invariant (e35 gravity noise)", ok,
            f"median rot {med:.2f} deg over {len(errs)} successful of "
            f"{STABILITY_TRIALS} trials ({fails} failures)")
    assert med < 5.0

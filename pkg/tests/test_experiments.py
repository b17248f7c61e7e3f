import json

import numpy as np
import pytest

from stimenc import experiments as ex
from stimenc.cli import main
from stimenc.config import ConfigError, config_from_dict, load_config
from stimenc.imageio import write_pgm
from stimenc.sparse import read_spmx, sparsity_stats

PATIENT = {"rho_um": 200.0, "lambda_um": 300.0, "axon_segments": 40, "name": "T1"}
IMPLANT = {"rows": 5, "cols": 5, "pitch_h_um": 400.0, "pitch_v_um": 400.0, "name": "5x5"}


def small_cfg(**extra):
    d = {"patients": [PATIENT], "implants": [IMPLANT], "grid_px": 12, "subset": 3,
         "dataset": {"format": "synthetic", "size": 16}, "solver": {"max_iters": 200}}
    d.update(extra)
    return d


def write_cfg(tmp_path, d, name="cfg.json"):
    f = tmp_path / name
    f.write_text(json.dumps(d))
    return f


def strip_timing(rows):
    return [{k: v for k, v in r.items() if k not in ex.TIMING_COLUMNS} for r in rows]


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict(small_cfg(methods=["ours", "magic"])).validate()
    with pytest.raises(ConfigError):
        config_from_dict(small_cfg(patients=[])).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"patients": [{"rho_um": 100}]})
    with pytest.raises(ConfigError):
        config_from_dict(small_cfg(dataset={"format": "idx", "path": str(tmp_path / "nope")})
                         ).validate()
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"x": 1}, "bad.json").with_suffix(".missing"))
    (tmp_path / "broken.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.json")
    flat = config_from_dict({**PATIENT, **IMPLANT, "dataset": {"format": "synthetic"}})
    assert flat.patients[0].rho_um == 200.0
    assert flat.implants[0].rows == 5


def test_cli_bad_config_exits_nonzero(tmp_path, capsys):
    f = write_cfg(tmp_path, small_cfg(methods=[]))
    assert main(["encode", "--config", str(f), "--out", str(tmp_path / "o")]) != 0
    assert "stimenc: error:" in capsys.readouterr().err
    assert main(["encode", "--config", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "o")]) != 0


def test_encode_outputs_and_audit(tmp_path):
    f = write_cfg(tmp_path, small_cfg())
    out = tmp_path / "run"
    assert main(["encode", "--config", str(f), "--out", str(out), "--audit"]) == 0
    lines = (out / "runs.csv").read_text().splitlines()
    assert lines[0] == ("patient,implant,method,image,ssim_lin,psnr_lin,mae_lin,"
                        "ssim_nl,psnr_nl,mae_nl,iters,seconds")
    rows = ex.read_csv(out / "runs.csv")
    assert len(rows) == 3 * 4
    summary = ex.read_csv(out / "summary.csv")
    assert {r["method"] for r in summary} == {"nearest", "lanczos", "pinv", "ours"}
    ours = [float(r["ssim_nl"]) for r in rows if r["method"] == "ours"]
    s_row = next(r for r in summary if r["method"] == "ours")
    assert float(s_row["ssim_nl"]) == pytest.approx(np.mean(ours), rel=1e-12)
    S = np.load(out / "stimuli" / "T1_5x5_ours.npy")
    assert S.shape == (3, 25)
    assert np.all((S >= 0) & (S <= 1))
    assert (out / "percepts" / "T1_5x5" / "ours" / "00000.pgm").exists()
    assert ex.audit_encode(config_from_dict(small_cfg()), out) == []


def test_audit_detects_tampering(tmp_path):
    cfg = config_from_dict(small_cfg(methods=["lanczos"]))
    out = tmp_path / "run"
    ex.cmd_encode(cfg, out)
    S = np.load(out / "stimuli" / "T1_5x5_lanczos.npy")
    np.save(out / "stimuli" / "T1_5x5_lanczos.npy", S * 0.5)
    assert ex.audit_encode(cfg, out)


def test_encode_deterministic(tmp_path):
    cfg = config_from_dict(small_cfg())
    ex.cmd_encode(cfg, tmp_path / "a")
    ex.cmd_encode(cfg, tmp_path / "b")
    ra = strip_timing(ex.read_csv(tmp_path / "a" / "runs.csv"))
    rb = strip_timing(ex.read_csv(tmp_path / "b" / "runs.csv"))
    assert ra == rb


def test_all_black_image(tmp_path):
    write_pgm(np.zeros((16, 16)), tmp_path / "black.pgm")
    cfg = config_from_dict(small_cfg(dataset={"format": "pgm", "path": str(tmp_path / "black.pgm")}))
    cfg.validate()
    runs, recs = ex.encode_condition(cfg, cfg.patients[0], cfg.implants[0],
                                     ex.load_images(cfg), ex.make_targets(
                                         ex.load_images(cfg), cfg.grid_for(cfg.implants[0])))
    assert set(runs) == {"nearest", "lanczos", "pinv", "ours"}
    for r in runs.values():
        assert np.array_equal(r.stimuli, np.zeros_like(r.stimuli))
    for rec in recs:
        assert rec.nonlinear.mae == 0.0
        assert rec.linear.mae == 0.0


def test_gen_matrix(tmp_path):
    f = write_cfg(tmp_path, small_cfg())
    out = tmp_path / "m"
    assert main(["gen-matrix", "--config", str(f), "--out", str(out)]) == 0
    rows = ex.read_csv(out / "sparsity.csv")
    assert len(rows) == 1
    P = read_spmx(out / "P_T1_5x5.spmx")
    assert int(rows[0]["nnz"]) == P.nnz
    assert int(rows[0]["bytes_estimate"]) == (out / "P_T1_5x5.spmx").stat().st_size
    assert int(rows[0]["dense_f32_bytes"]) == 4 * P.rows * P.cols
    hist = ex.read_csv(out / "mass_histogram.csv")
    cfg = config_from_dict(small_cfg())
    P64 = ex.matrix_for(cfg.patients[0], cfg.implants[0], cfg.grid_for(cfg.implants[0]), cfg.tau)
    assert sum(float(h["mass"]) for h in hist) == pytest.approx(P64.values.sum(), rel=1e-12)
    # the file stores float32 values
    assert np.array_equal(P.values, P64.values.astype(np.float32).astype(np.float64))
    # regenerating gives the same bytes
    ex.cmd_gen_matrix(config_from_dict(small_cfg()), tmp_path / "m2")
    assert (out / "P_T1_5x5.spmx").read_bytes() == (tmp_path / "m2" / "P_T1_5x5.spmx").read_bytes()


def test_checkpoint_schedule():
    ks = ex.checkpoint_schedule(200)
    assert ks[:33] == list(range(33))
    assert ks[-1] == 200
    assert all(b > a for a, b in zip(ks, ks[1:]))
    assert ex.checkpoint_schedule(5) == [0, 1, 2, 3, 4, 5]


def test_anytime(tmp_path):
    cfg = config_from_dict(small_cfg(anytime={"max_iters": 60, "timing_iters": 20,
                                              "frames": 3}))
    res = ex.cmd_anytime(cfg, tmp_path)
    curve = res["curve"]
    assert curve[0][2] == 0
    # iteration 0 is the zero start
    imgs = ex.load_images(cfg)
    X = ex.make_targets(imgs, cfg.grid_for(cfg.implants[0]))
    model = ex.model_for(cfg.patients[0], cfg.implants[0], cfg.grid_for(cfg.implants[0]))
    Y0 = model.forward_nonlinear(np.zeros((25, X.shape[1])))
    s0 = np.mean([m.ssim for m in ex.evaluate_block(Y0, X, (12, 12))])
    assert curve[0][4] == pytest.approx(s0, rel=1e-12)
    fb = [r[5] for r in curve]
    assert all(b <= a for a, b in zip(fb, fb[1:]))
    for name in ("anytime.csv", "crossover.csv", "warmstart.csv"):
        assert (tmp_path / name).exists()
    assert len(res["warm"]) == 3


def test_best_snapshots_match_solver(rng):
    cfg = config_from_dict(small_cfg())
    imp = cfg.implants[0]
    grid = cfg.grid_for(imp)
    P = ex.matrix_for(cfg.patients[0], imp, grid, cfg.tau)
    X = rng.uniform(size=(grid.n_pixels, 2))
    snaps, fs, res = ex.best_iterate_snapshots(P, X, cfg.solver, [0, 5, 40])
    for b in range(2):
        assert fs[40][b] == res[b].f_best
        assert np.array_equal(snaps[40][:, b], res[b].s_best)


def test_truncation_ablation(tmp_path):
    f = write_cfg(tmp_path, small_cfg())
    out = tmp_path / "t"
    assert main(["truncate-ablation", "--config", str(f), "--out", str(out),
                 "--taus", "0,0.05,0.2"]) == 0
    rows = ex.read_csv(out / "truncation.csv")
    nnz = [int(r["nnz"]) for r in rows]
    assert all(b <= a for a, b in zip(nnz, nnz[1:]))
    # tau = 0 reproduces the untruncated encode bitwise
    cfg = config_from_dict(small_cfg(tau=0.0, methods=["ours"]))
    recs = ex.cmd_encode(cfg, tmp_path / "base")
    s = ex.summarize(recs)[0]
    assert float(rows[0]["ssim_nl"]) == s[7]
    assert float(rows[0]["psnr_lin"]) == s[5]


def test_mismatch_identity_reproduces_standard_gain():
    cfg = config_from_dict(small_cfg(tau=0.05))
    imp = cfg.implants[0]
    imgs = ex.load_images(cfg)
    X = ex.make_targets(imgs, cfg.grid_for(imp))
    p = cfg.patients[0]
    s_o, s_l = ex.mismatch_cell(cfg, p, p, imp, imgs, X, rescale_ours=False)
    _, recs = ex.encode_condition(cfg, p, imp, imgs, X, methods=["ours", "lanczos"])
    std_o = np.mean([r.nonlinear.ssim for r in recs if r.method == "ours"])
    std_l = np.mean([r.nonlinear.ssim for r in recs if r.method == "lanczos"])
    assert s_o - s_l == std_o - std_l


def test_mismatch_grid_cli(tmp_path):
    f = write_cfg(tmp_path, small_cfg(subset=2))
    out = tmp_path / "mm"
    assert main(["mismatch-grid", "--config", str(f), "--out", str(out),
                 "--rho-values", "150,400", "--lambda-values", "100,500"]) == 0
    rows = ex.read_csv(out / "mismatch.csv")
    assert len(rows) == 8
    assert {r["panel"] for r in rows} == {"rho", "lambda"}


def test_translated_sequence():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    seq = ex.translated_sequence(img, 3)
    assert np.array_equal(seq[0], img)
    assert seq[1][:, 0].tolist() == [0, 0, 0]
    assert np.array_equal(seq[1][:, 1:], img[:, :3])


def test_bench(tmp_path):
    d = small_cfg(implants=[{"rows": 15, "cols": 15, "pitch_h_um": 400.0, "pitch_v_um": 400.0},
                            {"rows": 100, "cols": 100, "pitch_h_um": 100.0, "pitch_v_um": 100.0}],
                  bench={"iters": 10})
    f = write_cfg(tmp_path, d)
    assert main(["gen-matrix", "--config", str(f), "--out", str(tmp_path / "m")]) == 0
    out = tmp_path / "b"
    assert main(["bench", "--config", str(f), "--out", str(out),
                 "--matrix-dir", str(tmp_path / "m")]) == 0
    rows = ex.read_csv(out / "bench.csv")
    assert [int(r["iters"]) for r in rows] == [1000, 1000]
    assert all(r["matrix_source"] == "spmx" for r in rows)
    assert float(rows[1]["mean_ms"]) > float(rows[0]["mean_ms"])
    assert json.loads((out / "machine.json").read_text())["cpu_count"]
    again = ex.cmd_bench(load_config(f), tmp_path / "b2", tmp_path / "m")
    for r1, r2 in zip(rows, again):
        ratio = float(r1["mean_ms"]) / r2[4]
        assert 1 / 3 <= ratio <= 3
    nnz = [sparsity_stats(read_spmx(p))["nnz"] for p in sorted((tmp_path / "m").glob("*.spmx"))]
    assert len(nnz) == 2

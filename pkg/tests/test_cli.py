import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from implicit_orpca import io_formats as iof
from implicit_orpca.cli import main
from implicit_orpca.metrics import support_f1
from implicit_orpca.model import DivergenceError
from video_fixtures import moving_square, static_scene, to_pgm

TINY = ["--p", "20", "--n", "30", "--rho", "0.02", "--rank", "2"]


def digests(folder, skip=("timing.json",)):
    out = {}
    for name in sorted(os.listdir(folder)):
        if name not in skip:
            with open(os.path.join(folder, name), "rb") as fh:
                out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def write_frames(folder, frames):
    folder.mkdir()
    for t in range(frames.shape[1]):
        (folder / f"f{t:04d}.pgm").write_bytes(to_pgm(frames[:, t]))


# --------------------------------------------------------------------------
# simulate


def test_simulate_both_files(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", *TINY, "--algo", "both", "--seeds", "2", "--out", str(out)]) == 0
    names = set(os.listdir(out))
    assert {"ev_implicit_mean.csv", "ev_explicit_default_mean.csv", "manifest.json",
            "ev_implicit_seed0.csv", "ev_implicit_seed1.csv"} <= names
    assert "timing.json" not in names
    ev = iof.read_ev_csv(str(out / "ev_implicit_mean.csv"))
    assert ev.shape == (30,) and np.all((ev >= 0) & (ev <= 1 + 1e-12))
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seeds"] == [0, 1]
    assert man["config"]["alpha_e"] == 0.01 and man["config"]["p"] == 20


def test_simulate_mean_is_mean_of_seeds(tmp_path):
    out = tmp_path / "s"
    main(["simulate", *TINY, "--seeds", "3", "--out", str(out)])
    per = [iof.read_ev_csv(str(out / f"ev_implicit_seed{s}.csv")) for s in range(3)]
    np.testing.assert_allclose(iof.read_ev_csv(str(out / "ev_implicit_mean.csv")),
                               np.mean(per, axis=0), rtol=0, atol=0)


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", *TINY, "--algo", "both", "--seeds", "2", "--export", "--timing"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
    assert (tmp_path / "a" / "timing.json").exists()


def test_simulate_parallel_matches_serial(tmp_path):
    main(["simulate", *TINY, "--seeds", "3", "--out", str(tmp_path / "a")])
    main(["simulate", *TINY, "--seeds", "3", "--jobs", "2", "--out", str(tmp_path / "b")])
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


def test_simulate_bad_rho(tmp_path):
    assert main(["simulate", "--p", "10", "--n", "10", "--rho", "1.5", "--out", str(tmp_path)]) == 2


def test_simulate_missing_dims(tmp_path):
    assert main(["simulate", "--p", "10", "--out", str(tmp_path)]) == 2


def test_simulate_unknown_flag(tmp_path):
    assert main(["simulate", "--preset", "small", "--bogus", "--out", str(tmp_path)]) == 2


def test_simulate_bad_hyper(tmp_path):
    assert main(["simulate", *TINY, "--mu", "1.5", "--out", str(tmp_path)]) == 2


def test_simulate_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", *TINY, "--seeds", "1", "--out", str(blocker / "sub")]) == 3


def test_simulate_divergence_exit(tmp_path, monkeypatch):
    from implicit_orpca import implicit_solvers

    def boom(*a, **k):
        raise DivergenceError("forced")

    monkeypatch.setattr(implicit_solvers, "hp_mom_grad", boom)
    assert main(["simulate", *TINY, "--seeds", "1", "--out", str(tmp_path)]) == 4


# --------------------------------------------------------------------------
# run


def test_run_zero_matrix(tmp_path):
    src = tmp_path / "z.orpm"
    iof.write_matrix(str(src), np.zeros((6, 5)))
    assert main(["run", "--input", str(src), "--rank", "2", "--out", str(tmp_path / "o")]) == 0
    o = tmp_path / "o"
    assert not np.any(iof.read_matrix(str(o / "L.orpm")))
    assert not np.any(iof.read_matrix(str(o / "E.orpm")))
    assert iof.read_matrix(str(o / "R.orpm")).shape == (5, 2)
    diag = (o / "diagnostics.csv").read_text().splitlines()
    assert diag[0] == "sample,fidelity,inner_iters,diverged" and len(diag) == 6


def test_run_rank_too_large(tmp_path):
    src = tmp_path / "z.csv"
    iof.write_csv_matrix(str(src), np.ones((3, 4)))
    assert main(["run", "--input", str(src), "--rank", "4", "--out", str(tmp_path / "o")]) == 2


def test_run_missing_input(tmp_path):
    assert main(["run", "--input", str(tmp_path / "nope.orpm"), "--rank", "1",
                 "--out", str(tmp_path / "o")]) == 3


def test_run_bad_extension(tmp_path):
    src = tmp_path / "z.txt"
    src.write_text("1,2\n")
    assert main(["run", "--input", str(src), "--rank", "1", "--out", str(tmp_path / "o")]) == 2


def test_run_matches_simulate_export(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", *TINY, "--seeds", "1", "--seed-base", "7", "--export",
                 "--out", str(sim)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--input", str(sim / "Z_seed7.orpm"), "--rank", "2", "--out", str(out)]) == 0
    for name in ("R", "E", "L"):
        a = (sim / f"{name}_seed7.orpm").read_bytes()
        b = (out / f"{name}.orpm").read_bytes()
        assert a == b


def test_run_csv_and_explicit(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "z.csv"
    iof.write_csv_matrix(str(src), np.outer(rng.normal(size=6), rng.normal(size=12)))
    assert main(["run", "--input", str(src), "--rank", "1", "--algo", "explicit",
                 "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["lambda1"] == pytest.approx(1 / np.sqrt(6))
    assert str(src) in man["inputs"]


def test_run_byte_identical(tmp_path):
    src = tmp_path / "z.orpm"
    rng = np.random.default_rng(1)
    iof.write_matrix(str(src), np.outer(rng.normal(size=8), rng.normal(size=20)))
    main(["run", "--input", str(src), "--rank", "1", "--out", str(tmp_path / "a")])
    main(["run", "--input", str(src), "--rank", "1", "--out", str(tmp_path / "b")])
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


# --------------------------------------------------------------------------
# frames


def test_frames_static_scene(tmp_path):
    write_frames(tmp_path / "in", static_scene(30))
    out = tmp_path / "out"
    assert main(["frames", str(tmp_path / "in" / "*.pgm"), "--out", str(out)]) == 0
    for t in range(30):
        assert (out / f"bg_{t:05d}.pgm").exists()
    for t in range(9, 30):
        fg = iof.parse_pgm((out / f"fg_{t:05d}.pgm").read_bytes())
        assert fg.max() <= 2 / 255
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["frame_order"]) == 30 and man["frame_order"] == sorted(man["frame_order"])


def test_frames_moving_square(tmp_path):
    frames, masks = moving_square()
    write_frames(tmp_path / "in", frames)
    out = tmp_path / "out"
    assert main(["frames", str(tmp_path / "in" / "*.pgm"), "--out", str(out)]) == 0
    fg = np.array([iof.parse_pgm((out / f"fg_{t:05d}.pgm").read_bytes()).ravel()
                   for t in range(40, 60)]).T
    assert support_f1(fg, masks[:, 40:], 0.1) >= 0.7


def test_frames_list_file_and_downscale(tmp_path):
    big = static_scene(3)
    src = tmp_path / "in"
    src.mkdir()
    paths = []
    for t in range(3):
        img = np.kron(big[:, t].reshape(48, 72), np.ones((2, 2)))
        path = src / f"{2 - t}.pgm"
        path.write_bytes(to_pgm(img.ravel(), 96, 144))
        paths.append(str(path))
    lst = tmp_path / "list.txt"
    lst.write_text("\n".join(paths) + "\n")
    out = tmp_path / "out"
    assert main(["frames", "--list", str(lst), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["frame_order"] == paths
    assert man["config"]["source_width"] == 144
    bg = iof.parse_pgm((out / "bg_00001.pgm").read_bytes())
    assert bg.shape == (48, 72)


def test_frames_empty_glob(tmp_path):
    assert main(["frames", str(tmp_path / "*.pgm"), "--out", str(tmp_path / "o")]) == 2


def test_frames_mixed_sizes(tmp_path):
    (tmp_path / "a.pgm").write_bytes(to_pgm(np.zeros(6), 2, 3))
    (tmp_path / "b.pgm").write_bytes(to_pgm(np.zeros(4), 2, 2))
    assert main(["frames", str(tmp_path / "*.pgm"), "--width", "2", "--height", "2",
                 "--out", str(tmp_path / "o")]) == 2


def test_frames_bad_pgm(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    assert main(["frames", str(tmp_path / "a.pgm"), "--out", str(tmp_path / "o")]) == 2


def test_frames_byte_identical(tmp_path):
    write_frames(tmp_path / "in", moving_square(n=12)[0])
    pat = str(tmp_path / "in" / "*.pgm")
    main(["frames", pat, "--out", str(tmp_path / "a")])
    main(["frames", pat, "--out", str(tmp_path / "b")])
    assert digests(tmp_path / "a") == digests(tmp_path / "b")


# --------------------------------------------------------------------------
# convert


def test_convert_roundtrip(tmp_path):
    M = np.random.default_rng(4).normal(size=(3, 5))
    a = tmp_path / "a.orpm"
    iof.write_matrix(str(a), M)
    assert main(["convert", str(a), str(tmp_path / "b.csv")]) == 0
    assert main(["convert", str(tmp_path / "b.csv"), str(tmp_path / "c.orpm")]) == 0
    assert (tmp_path / "c.orpm").read_bytes() == a.read_bytes()


def test_convert_ragged(tmp_path):
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    assert main(["convert", str(tmp_path / "r.csv"), str(tmp_path / "r.orpm")]) == 2


def test_convert_empty(tmp_path):
    (tmp_path / "e.csv").write_text("")
    assert main(["convert", str(tmp_path / "e.csv"), str(tmp_path / "e.orpm")]) == 0
    assert (tmp_path / "e.orpm").read_bytes() == iof.matrix_to_bytes(np.zeros((0, 0)))
    assert main(["convert", str(tmp_path / "e.orpm"), str(tmp_path / "f.csv")]) == 0
    assert (tmp_path / "f.csv").read_text() == ""


def test_convert_unknown_format(tmp_path):
    (tmp_path / "a.csv").write_text("1\n")
    assert main(["convert", str(tmp_path / "a.csv"), str(tmp_path / "a.dat")]) == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "implicit_orpca", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"

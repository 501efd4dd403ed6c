import json

import numpy as np
import pytest

from gasso.archive import load_model, save_model
from gasso.cli import elbow_index, main, preprocess_gaussian, read_block, write_block
from gasso.expfam import DomainError
from gasso.model import DataBlock

from conftest import random_params, small_spec
from gasso.simgen import generate


def _csv(path, rows, header=("id", "a", "b")):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def test_read_valid_bernoulli(tmp_path):
    # [TRIVIAL]
    b = read_block(_csv(tmp_path / "x.csv", [("s1", 0, 1), ("s2", 1, 1), ("s3", 0, 0)]), "bernoulli")
    assert b.shape == (3, 2)
    assert np.array_equal(b.X, [[0, 1], [1, 1], [0, 0]])


@pytest.mark.parametrize("fam,bad", [("bernoulli", 2), ("poisson", 3.5), ("poisson", -1)])
def test_read_rejects_out_of_support(tmp_path, fam, bad):
    # [TRIVIAL]
    f = _csv(tmp_path / "x.csv", [("s1", 0, 1), ("s2", bad, 1)])
    with pytest.raises(DomainError, match="'s2'.*'a'"):
        read_block(f, fam)


def test_read_rejects_ragged_and_text(tmp_path):
    # [TRIVIAL]
    with pytest.raises(Exception, match="line 3"):
        read_block(_csv(tmp_path / "x.csv", [("s1", 0, 1), ("s2", 1)]), "gaussian")
    with pytest.raises(Exception, match="line 2"):
        read_block(_csv(tmp_path / "y.csv", [("s1", "x", 1)]), "gaussian")


def test_mixed_family_declaration(tmp_path):
    # [TRIVIAL]
    b = read_block(_csv(tmp_path / "x.csv", [("s1", 0.5, 3), ("s2", -1.2, 0)]), "gaussian,poisson")
    assert list(b.family) == [0, 2]


def test_write_read_round_trip(tmp_path, rng):
    # [TRIVIAL]
    for fam, X in (("gaussian", rng.normal(size=(6, 3))), ("poisson", rng.poisson(3, (6, 3)).astype(float)),
                   ("bernoulli", (rng.random((6, 3)) < 0.5).astype(float))):
        f = tmp_path / f"{fam}.csv"
        write_block(f, DataBlock(X, fam))
        assert np.array_equal(read_block(f, fam).X, X)


def test_preprocess_on_pure_noise():
    # [DERIVED] unit-variance noise standardises to sigma ~ 1
    ok = 0
    for seed in range(20):
        X = np.random.default_rng(seed).normal(size=(100, 50))
        Xs, sigma = preprocess_gaussian(X)
        ok += 0.9 <= sigma <= 1.1
    assert ok >= 18


def test_preprocess_with_low_rank_signal():
    # [DERIVED] estimate should match the noise level of the standardised matrix
    ok = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        U = np.linalg.qr(rng.normal(size=(100, 2)))[0]
        V = np.linalg.qr(rng.normal(size=(50, 2)))[0]
        X = (U * [80.0, 60.0]) @ V.T + rng.normal(size=(100, 50))
        _, sigma = preprocess_gaussian(X)
        true = np.mean(1.0 / X.std(axis=0, ddof=1))
        ok += 0.9 <= sigma / true <= 1.1
    assert ok >= 9


def test_preprocess_output_and_errors(rng):
    # [DERIVED] standardised columns have sd 1 before the sigma rescale
    X = rng.normal(size=(30, 5)) * 4 + 2
    Xs, sigma = preprocess_gaussian(X)
    assert np.allclose(Xs.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(Xs.std(axis=0, ddof=1), 1 / sigma)
    X[:, 2] = 1.0
    with pytest.raises(ValueError, match="column 2"):
        preprocess_gaussian(X)


def test_elbow_index():
    # [DERIVED] gap ratios computed by hand
    assert elbow_index(np.array([10.0, 9.0, 2.0, 1.9, 1.8])) == 2
    assert elbow_index(np.array([3.0, 2.9, 2.8])) == 0
    assert elbow_index(np.array([10.0, 4.0, 3.0, 1.0])) == 3


@pytest.mark.parametrize("suffix", [".npz", ""])
def test_archive_round_trip(tmp_path, rng, suffix):
    # [TRIVIAL]
    P = random_params(rng, ranks=(2, 0, 1))
    path = save_model(tmp_path / f"model{suffix}", P, {"note": "x"})
    Q, meta = load_model(path)
    for k, v in P.as_dict().items():
        assert np.array_equal(v, Q.as_dict()[k]), k
    assert meta["note"] == "x" and meta["format_version"] == 1 and meta["ranks"] == [2, 0, 1]


@pytest.fixture(scope="module")
def blocks(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    _, d1, d2 = generate(small_spec(("gaussian", "bernoulli"), seed=5, n=60, p1=20, p2=15))
    write_block(d / "x1.csv", d1)
    write_block(d / "x2.csv", d2)
    (d / "manifest.ini").write_text("[block1]\npath = x1.csv\nfamily = gaussian\n"
                                    "[block2]\npath = x2.csv\nfamily = bernoulli\n")
    return d, d1, d2


def test_fit_is_reproducible(blocks, tmp_path):
    # [TRIVIAL]
    d, _, _ = blocks
    for k in (1, 2):
        assert main(["fit", "--manifest", str(d / "manifest.ini"), "--ranks", "1,1,1", "--seed", "3",
                     "--out", str(tmp_path / f"m{k}.npz")]) == 0
    a, ma = load_model(tmp_path / "m1.npz")
    b, mb = load_model(tmp_path / "m2.npz")
    assert all(np.array_equal(x, b.as_dict()[k]) for k, x in a.as_dict().items())
    assert ma == mb
    assert (tmp_path / "m1_loglik.csv").read_text() == (tmp_path / "m2_loglik.csv").read_text()
    assert main(["check", "--model", str(tmp_path / "m1.npz")]) == 0


def test_downstream_subcommands(blocks, tmp_path, capsys):
    # [TRIVIAL]
    d, d1, d2 = blocks
    model = tmp_path / "model"
    assert main(["fit", "--x1", str(d / "x1.csv"), "--x2", str(d / "x2.csv"), "--family2", "bernoulli",
                 "--ranks", "1,1,1", "--mode", "full", "--out", str(model)]) == 0
    assert (model / "meta.json").exists() and json.loads((model / "meta.json").read_text())["mode"] == "full"

    assert main(["assoc-test", "--model", str(model), "--permutations", "50", "--seed", "1",
                 "--out", str(tmp_path / "assoc.txt")]) == 0
    report = (tmp_path / "assoc.txt").read_text()
    assert "(1 + #exceed) / (B + 1)" in report and "#exceed / B" in report
    assert len((tmp_path / "assoc.null.csv").read_text().splitlines()) == 51

    write_block(tmp_path / "new.csv", DataBlock(d1.X[:3], "gaussian"))
    assert main(["annotate", "--model", str(model), "--input", str(tmp_path / "new.csv"), "--top-k", "4",
                 "--out", str(tmp_path / "ann.csv")]) == 0
    assert len((tmp_path / "ann.csv").read_text().splitlines()) == 1 + 3 * 4

    write_block(tmp_path / "q.csv", DataBlock(d2.X[:2], "bernoulli"))
    assert main(["retrieve", "--model", str(model), "--input", str(tmp_path / "q.csv"), "--top-k", "5",
                 "--out", str(tmp_path / "ret.csv")]) == 0
    lines = (tmp_path / "ret.csv").read_text().splitlines()
    assert lines[0] == "query,rank,sample,distance" and len(lines) == 11


def test_ranks_and_simulate(blocks, tmp_path):
    # [TRIVIAL]
    d, _, _ = blocks
    assert main(["ranks", "--manifest", str(d / "manifest.ini"), "--folds", "4", "--max-rank", "2",
                 "--out", str(tmp_path / "cv")]) == 0
    assert {p.name for p in (tmp_path / "cv").iterdir()} == {"cv_block1.csv", "cv_block2.csv", "cv_joint.csv"}
    outs = []
    for k in (1, 2):
        f = tmp_path / f"sim{k}.csv"
        assert main(["simulate", "--setting", "3", "--replicates", "2", "--seed", "4", "--out", str(f)]) == 0
        outs.append([l for l in f.read_text().splitlines() if ",time," not in l])
    assert outs[0] == outs[1]


def test_errors_exit_with_code_two(tmp_path, capsys):
    # [TRIVIAL]
    bad = _csv(tmp_path / "b.csv", [("s1", 0, 2), ("s2", 1, 0)])
    good = _csv(tmp_path / "g.csv", [("s1", 0.1, 2.0), ("s2", 1.0, 0.0)])
    assert main(["fit", "--x1", str(good), "--x2", str(bad), "--family2", "bernoulli", "--ranks", "0,0,0",
                 "--out", str(tmp_path / "m.npz")]) == 2
    assert "support" in capsys.readouterr().err
    assert main(["check", "--model", str(tmp_path / "missing.npz")]) == 2

"""End-to-end CLI behavior: exit codes, artifacts, determinism."""
import json

import numpy as np
import pytest

from randconv.cli import main
from randconv.images import load_image


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Four 16x16 synthetic grayscale PNGs."""
    d = tmp_path_factory.mktemp("corpus")
    assert main(["gen-data", "--out", str(d), "--count", "4", "--size", "16",
                 "--seed", "11"]) == 0
    return d


@pytest.fixture(scope="module")
def img32(tmp_path_factory):
    d = tmp_path_factory.mktemp("img32")
    assert main(["gen-data", "--out", str(d), "--count", "1", "--size", "32",
                 "--seed", "3"]) == 0
    return next(d.glob("*.png"))


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["reconstruct"]) == 1
    assert main(["verify"]) == 1
    capsys.readouterr()


def test_data_errors_exit_2(tmp_path, capsys):
    code = main(["reconstruct", "--image", str(tmp_path / "missing.png"),
                 "--preset", "rrvgg_conv1_1", "--out", str(tmp_path)])
    assert code == 2
    assert "error:" in capsys.readouterr().err

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["reconstruct", "--image", str(tmp_path / "missing.png"),
                 "--net", str(bad), "--out", str(tmp_path)])
    assert code == 2
    capsys.readouterr()

    assert main(["sweep-channels", "--images", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["gen-data", "--out", str(d), "--count", "3", "--size", "12",
                     "--seed", "7"]) == 0
    names = sorted(p.name for p in a.glob("*.png"))
    assert len(names) == 3
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_metrics_self_comparison(img32, capsys):
    assert main(["metrics", "--a", str(img32), "--b", str(img32)]) == 0
    out = capsys.readouterr().out
    assert "pearson=1 ssim=1" in out


def test_reconstruct_identity_net(img32, tmp_path, capsys):
    net = tmp_path / "identity.json"
    net.write_text(json.dumps({
        "mode": "empirical",
        "input": [1, 32, 32],
        "layers": [{"kind": "crop", "height": 32, "width": 32}],
    }))
    code = main(["reconstruct", "--image", str(img32), "--net", str(net),
                 "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "pearson=1 ssim=1" in out

    recon = tmp_path / f"{img32.stem}_recon.png"
    orig = load_image(img32)
    back = load_image(recon)
    np.testing.assert_array_equal(orig.data, back.data)


def test_reconstruct_preset_reruns_identically(img32, tmp_path, capsys):
    first, second = tmp_path / "one", tmp_path / "two"
    for d in (first, second):
        d.mkdir()
        code = main(["reconstruct", "--image", str(img32),
                     "--preset", "rrvgg_conv1_deconv1", "--channels", "8",
                     "--seed", "5", "--out", str(d)])
        assert code == 0
    capsys.readouterr()
    name = f"{img32.stem}_recon.png"
    assert (first / name).read_bytes() == (second / name).read_bytes()


def test_sweep_channels_cli(corpus, tmp_path, capsys):
    outs = []
    for tag in ("p", "q"):
        d = tmp_path / tag
        d.mkdir()
        code = main(["sweep-channels", "--images", str(corpus),
                     "--channels", "2,4", "--nets", "2", "--seed", "9",
                     "--out", str(d)])
        assert code == 0
        outs.append(d)
    capsys.readouterr()
    for name in ("sweep_channels_raw.csv", "sweep_channels_agg.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    raw = (outs[0] / "sweep_channels_raw.csv").read_text().splitlines()
    assert raw[0] == "sweep_param,net_index,image_id,ssim,pearson"
    assert len(raw) == 1 + 2 * 2 * 4


def test_sweep_kernel_cli(corpus, tmp_path, capsys):
    code = main(["sweep-kernel", "--images", str(corpus), "--kernels", "3,5",
                 "--nets", "2", "--channels", "4", "--seed", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    agg = (tmp_path / "sweep_kernel_agg.csv").read_text().splitlines()
    assert agg[0] == "sweep_param,ssim_mean,ssim_std,corr_mean,corr_std"
    assert len(agg) == 3


def test_verify_variance_cli(tmp_path, capsys):
    code = main(["verify", "variance", "--size", "8", "--n", "64,256",
                 "--trials", "20", "--delta", "0.2", "--seed", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    trials = (tmp_path / "variance_trials.csv").read_text().splitlines()
    assert trials[0] == "n,trial,sin_theta,bound,holds"
    assert len(trials) == 1 + 2 * 20
    summary = (tmp_path / "variance_summary.csv").read_text().splitlines()
    assert summary[0] == "n,bound,trials,violations,violation_fraction,median_sin_theta"


def test_verify_cosine_cli(corpus, tmp_path, capsys):
    code = main(["verify", "cosine", "--images", str(corpus),
                 "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    lines = (tmp_path / "cosine_bounds.csv").read_text().splitlines()
    assert lines[0] == "image_id,bound,cos_phi,slack,holds"
    assert len(lines) == 5
    for line in lines[1:]:
        assert line.endswith(",1")


def test_verify_converge_l2_cli(tmp_path, capsys):
    code = main(["verify", "converge-l2", "--size", "8", "--n", "256",
                 "--trials", "3", "--seed", "0", "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    summary = (tmp_path / "converge_l2_summary.csv").read_text().splitlines()
    assert summary[0] == "n,trials,angle_mean_deg,median_sin_theta,cross_check_max_rel_err"
    rel = float(summary[1].split(",")[-1])
    assert rel < 1e-12


def test_verify_converge_avg_rejects_impossible_angle(tmp_path, capsys):
    code = main(["verify", "converge-avg", "--size", "4", "--gram-channels",
                 "2000", "--n", "128", "--trials", "3", "--max-angle", "0.0",
                 "--seed", "0", "--out", str(tmp_path)])
    assert code == 3
    assert "verification failed" in capsys.readouterr().err


def test_train_dcn_cli(corpus, tmp_path, capsys):
    code = main(["train-dcn", "--images", str(corpus), "--channels", "4",
                 "--iters", "8", "--batch", "2", "--checkpoint-every", "4",
                 "--lr", "1e-3", "--seed", "6", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "final_loss=" in out
    assert (tmp_path / "dcn_checkpoint.bin").exists()
    history = (tmp_path / "train_history.csv").read_text().splitlines()
    assert history[0] == "iter,lr,loss"
    assert [row.split(",")[0] for row in history[1:]] == ["4", "8"]

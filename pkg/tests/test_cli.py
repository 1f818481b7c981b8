"""Command-line surface: run main() in-process and check output and exit codes."""
import numpy as np
import pytest

from linkseg import io as lio
from linkseg.cli import main
from linkseg.tensor import Prng


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------- summary

def test_summary_lists_encoder_widths(capsys):
    code, out, _ = run(capsys, "summary")
    assert code == 0
    for pair in ["(64,64)", "(64,128)", "(128,256)", "(256,512)"]:
        assert pair in out
    assert "11535764" in out.replace(",", "")


def test_summary_no_bypass_same_total(capsys):
    _, with_b, _ = run(capsys, "summary")
    _, without, _ = run(capsys, "summary", "--no-bypass")
    total_line = [l for l in with_b.splitlines() if "total" in l]
    assert total_line == [l for l in without.splitlines() if "total" in l]


def test_summary_rejects_indivisible_height(capsys):
    code, _, err = run(capsys, "summary", "--height", "100")
    assert code == 2
    assert "32" in err


# ------------------------------------------------------------------- cost

def test_cost_reports_totals(capsys):
    code, out, _ = run(capsys, "cost")
    assert code == 0
    flat = out.replace(",", "")
    assert "11535764" in flat
    assert "22991216640" in flat        # FLOPs = 2 * MACs at 360x640
    assert "23071528" in flat           # fp16 bytes


def test_cost_records_mode(capsys):
    code, out, _ = run(capsys, "cost", "--records")
    assert code == 0
    assert all("\t" in l for l in out.splitlines() if l)


def test_cost_small_resolution(capsys):
    code, out, _ = run(capsys, "cost", "--res-height", "64", "--res-width", "64")
    assert code == 0


# -------------------------------------------------------------- gradcheck

def test_gradcheck_single_seed_passes(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", "0")
    assert code == 0
    assert "PASS" in out and "FAIL" not in out
    assert "end_to_end" in out
    assert "corrupted" in out


# --------------------------------------------------- data/train/eval chain

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-run")
    data = root / "toy"
    ckpt = root / "model.lkpt"
    code = main(["make-toy-data", "--out", str(data), "--num", "12",
                 "--height", "32", "--width", "32", "--classes", "3", "--seed", "5"])
    assert code == 0
    code = main(["train", "--data", str(data), "--out", str(ckpt),
                 "--width-div", "16", "--epochs", "2", "--batch", "4",
                 "--seed", "5"])
    assert code == 0
    return data, ckpt


def test_make_toy_data_writes_dataset(trained):
    data, _ = trained
    samples = lio.load_dataset(data)
    assert len(samples) == 12
    assert samples[0].image.shape == (3, 32, 32)
    assert samples[0].instances is not None


def test_train_writes_checkpoint_and_log(trained, capsys):
    data, ckpt = trained
    assert ckpt.exists()
    log = ckpt.with_suffix(ckpt.suffix + ".log")
    lines = log.read_text().strip().splitlines()
    assert len(lines) == 2
    for ln in lines:
        epoch, loss, miou = ln.split()
        assert np.isfinite(float(loss)) and 0.0 <= float(miou) <= 1.0


def test_eval_matches_logged_final_miou(trained, capsys):
    data, ckpt = trained
    code, out, _ = run(capsys, "eval", "--data", str(data), "--checkpoint", str(ckpt))
    assert code == 0
    logged = ckpt.with_suffix(ckpt.suffix + ".log").read_text().strip().splitlines()[-1]
    final_miou = float(logged.split()[2])
    shown = float(out.split("mIoU=")[1].split()[0])
    assert shown == pytest.approx(final_miou, abs=1e-6)


def test_predict_output_shape(trained, tmp_path, capsys):
    data, ckpt = trained
    img = lio.load_dataset(data)[0].image
    inp = tmp_path / "img.ltn"
    outp = tmp_path / "pred.ltn"
    lio.write_tensor(inp, img)
    code, _, _ = run(capsys, "predict", "--checkpoint", str(ckpt),
                     "--input", str(inp), "--out", str(outp))
    assert code == 0
    pred = lio.read_tensor(outp)
    assert pred.shape == img.shape[1:]
    assert pred.dtype == np.int32
    assert pred.min() >= 0 and pred.max() < 3


def test_eval_missing_checkpoint_is_runtime_error(trained, capsys):
    data, _ = trained
    code, _, err = run(capsys, "eval", "--data", str(data),
                       "--checkpoint", str(data / "nope.lkpt"))
    assert code == 1


def test_eval_corrupt_checkpoint_names_field(trained, tmp_path, capsys):
    data, ckpt = trained
    bad = tmp_path / "bad.lkpt"
    bad.write_bytes(b"XXXX" + ckpt.read_bytes()[4:])
    code, _, err = run(capsys, "eval", "--data", str(data), "--checkpoint", str(bad))
    assert code == 1
    assert "magic" in err


def test_train_rejects_indivisible_data(tmp_path, capsys):
    from linkseg.train import Sample, make_toy_dataset
    data = tmp_path / "odd"
    samples = make_toy_dataset(4, (32, 32), 3, seed=0)
    cropped = [Sample(image=s.image[:, :24, :24], labels=s.labels[:24, :24],
                      instances=s.instances[:24, :24]) for s in samples]
    lio.save_dataset(data, cropped)
    code, _, err = run(capsys, "train", "--data", str(data),
                       "--out", str(tmp_path / "m.lkpt"),
                       "--width-div", "16", "--epochs", "1")
    assert code == 2
    assert "32" in err


# ------------------------------------------------------------------ bench

def test_bench_tiny_run(capsys):
    import re
    code, out, _ = run(capsys, "bench", "--height", "32", "--width", "32",
                       "--iters", "3", "--warmup", "1", "--width-div", "16",
                       "--classes", "2")
    assert code == 0
    assert re.search(r"\d+x\d+", out)   # a resolution row was printed


def test_bench_fps_is_inverse_median():
    from linkseg.bench import BenchRow
    row = BenchRow(backend="numpy", requested_hw=(60, 60), effective_hw=(64, 64),
                   macs=1000, median_ms=4.0, p10_ms=3.0, p90_ms=5.0)
    assert row.fps == pytest.approx(1000.0 / 4.0)


def test_unknown_command_is_usage_error(capsys):
    assert main(["definitely-not-a-command"]) == 2

import pytest

torch = pytest.importorskip("torch")
pytest.importorskip("anomalite")
# a real submodule, so a stray namespace dir on sys.path cannot satisfy the check
pytest.importorskip("exporter.container")

import anomalite

from exporter import ImageEncoder, named_architecture
from exporter.cli import main


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    td = tmp_path_factory.mktemp("cli")
    torch.manual_seed(5)
    model = ImageEncoder(named_architecture("tiny-parity"))
    path = td / "tiny.pt"
    torch.save({"image_encoder." + k: v for k, v in model.state_dict().items()}, path)
    return path


def test_convert_then_fixtures(checkpoint, tmp_path, capsys):
    weights = tmp_path / "w.tensors"
    rc = main(["convert", str(checkpoint), "--arch", "tiny-parity", "--out", str(weights)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "112 tensors" in out and "22577 values" in out

    fixtures = tmp_path / "f.tensors"
    rc = main(["fixtures", str(weights), "--out", str(fixtures), "--count", "2", "--seed", "4"])
    assert rc == 0
    assert "2 fixture pairs" in capsys.readouterr().out

    tensors, meta = anomalite.read_container(fixtures)
    assert meta["count"] == "2"
    assert len(tensors) == 4


def test_convert_errors_exit_nonzero(checkpoint, tmp_path, capsys):
    rc = main(["convert", str(tmp_path / "absent.pt"), "--arch", "tiny-parity", "--out", str(tmp_path / "w")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err

    rc = main(["convert", str(checkpoint), "--arch", "mobilesam-v1", "--out", str(tmp_path / "w")])
    assert rc == 1  # checkpoint shape does not match the big architecture
    assert "does not match" in capsys.readouterr().err

    rc = main(["fixtures", str(tmp_path / "absent.tensors"), "--out", str(tmp_path / "f")])
    assert rc == 1


def test_unknown_architecture_is_reported(checkpoint, tmp_path, capsys):
    rc = main(["convert", str(checkpoint), "--arch", "bogus", "--out", str(tmp_path / "w")])
    assert rc == 1
    assert "unknown architecture" in capsys.readouterr().err

import struct

import pytest
import torch

from bootlm.checkpoint import MAGIC, load_checkpoint, read_raw, save_checkpoint
from bootlm.errors import CheckpointFormatError
from bootlm.model import BootModel, make_teacher
from conftest import tiny_config


def _pair():
    torch.manual_seed(0)
    student = BootModel(tiny_config(dtype="float32"))
    teacher = make_teacher(student)
    with torch.no_grad():
        for p in teacher.parameters():
            p.mul_(0.5)
    return student, teacher


def _forward(model):
    model.eval()
    return model(torch.tensor([[3, 4, 6, 7]]), torch.tensor([[0, 1, 3, 4]]), torch.tensor([[2]]))[1]


def test_full_round_trip_is_bit_identical(tmp_path):
    student, teacher = _pair()
    save_checkpoint(tmp_path / "c.bin", student, teacher, step=7, vocab=["a"] * 3)
    ck = load_checkpoint(tmp_path / "c.bin")
    assert ck.step == 7 and ck.mode == "full" and ck.config == student.config
    assert torch.equal(_forward(ck.student), _forward(student))
    for (n, a), (_, b) in zip(teacher.state_dict().items(), ck.teacher.state_dict().items()):
        assert torch.equal(a, b), n
    torch.testing.assert_close(ck.student.latent_head.weight, student.latent_head.weight, rtol=0, atol=0)


def test_student_export_omits_teacher_and_latent_head(tmp_path):
    student, teacher = _pair()
    save_checkpoint(tmp_path / "s.bin", student, teacher, mode="student")
    meta, arrays = read_raw(tmp_path / "s.bin")
    assert not any(k.startswith("teacher.") for k in arrays)
    assert not any("latent_head" in k for k in arrays)
    ck = load_checkpoint(tmp_path / "s.bin")
    assert ck.teacher is None and ck.student.latent_head is None
    assert torch.equal(_forward(ck.student), _forward(student))


def test_layout(tmp_path):
    student, _ = _pair()
    save_checkpoint(tmp_path / "c.bin", student, mode="student")
    data = (tmp_path / "c.bin").read_bytes()
    assert data[:8] == MAGIC
    (n,) = struct.unpack("<I", data[8:12])
    (count,) = struct.unpack("<I", data[12 + n:16 + n])
    assert count == len(read_raw(tmp_path / "c.bin")[1])
    n_floats = sum(p.numel() for k, p in student.state_dict().items() if not k.startswith("latent_head"))
    assert len(data) > 4 * n_floats


def test_corrupt_files(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTBOOT" + b"\0" * 20)
    with pytest.raises(CheckpointFormatError):
        read_raw(tmp_path / "bad.bin")
    student, _ = _pair()
    save_checkpoint(tmp_path / "c.bin", student)
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-5])
    with pytest.raises(CheckpointFormatError):
        read_raw(tmp_path / "cut.bin")
    (tmp_path / "long.bin").write_bytes(data + b"\0")
    with pytest.raises(CheckpointFormatError):
        read_raw(tmp_path / "long.bin")

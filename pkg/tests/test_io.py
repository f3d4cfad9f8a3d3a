import hashlib
import struct

import numpy as np
import pytest

from ainnoseg import io
from ainnoseg.errors import DataError, IntegrityError
from ainnoseg.inference import InferenceConfig, multiscale_infer
from ainnoseg.selftrain import load_model


# --- netpbm ---------------------------------------------------------------
def test_image_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    io.save_image(tmp_path / "a.ppm", img)
    assert np.array_equal(io.load_image(tmp_path / "a.ppm"), img)


def test_label_round_trip_including_ignore(tmp_path, rng):
    labels = rng.integers(0, 150, (6, 4)).astype(np.uint8)
    labels[0, 0] = 255
    io.save_labels(tmp_path / "a.pgm", labels)
    assert np.array_equal(io.load_labels(tmp_path / "a.pgm"), labels)


def test_raw_label_remap(tmp_path):
    io.write_pnm(tmp_path / "z.pgm", np.zeros((3, 3), np.uint8))
    assert (io.load_labels(tmp_path / "z.pgm") == 255).all()
    io.write_pnm(tmp_path / "o.pgm", np.ones((2, 2), np.uint8))
    assert (io.load_labels(tmp_path / "o.pgm") == 0).all()


def test_header_comments_are_skipped(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1 # width height\n255\n\x03\x04")
    assert io.read_pnm(tmp_path / "c.pgm").tolist() == [[3, 4]]


@pytest.mark.parametrize("blob", [b"P3\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00", b"P5\n1 x\n255\n\x00",
                                  b"P5\n1 1\n65535\n\x00\x00", b"P5\n1"])
def test_malformed_files_are_data_errors(tmp_path, blob):
    (tmp_path / "bad.pgm").write_bytes(blob)
    with pytest.raises(DataError):
        io.read_pnm(tmp_path / "bad.pgm")


def test_label_beyond_class_count(tmp_path):
    io.write_pnm(tmp_path / "l.pgm", np.full((2, 2), 9, np.uint8))
    with pytest.raises(DataError):
        io.load_labels(tmp_path / "l.pgm", num_classes=5)


def test_dataset_size_mismatch(tmp_path, rng):
    io.save_image(tmp_path / "images" / "a.ppm", rng.integers(0, 256, (4, 4, 3), dtype=np.uint8))
    io.save_labels(tmp_path / "labels" / "a.pgm", np.zeros((4, 5), np.uint8))
    with pytest.raises(DataError):
        io.load_dataset(tmp_path)


def test_dataset_round_trip(tmp_path, synth8):
    io.save_dataset(tmp_path, synth8)
    back = io.load_dataset(tmp_path, num_classes=5)
    assert [s.id for s in back] == [s.id for s in synth8]
    assert all(np.array_equal(a.image, b.image) and np.array_equal(a.labels, b.labels) for a, b in zip(back, synth8))


# --- checkpoints ----------------------------------------------------------
def test_checkpoint_byte_layout():
    state = {"w": np.array([[1.5, -2.0]])}
    body = (b"ASEG1" + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w" + struct.pack("<BI", 1, 2)
            + struct.pack("<II", 1, 2) + struct.pack("<2d", 1.5, -2.0))
    assert io.encode_checkpoint(state) == body + hashlib.blake2b(body, digest_size=8).digest()


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    state = {"a": rng.normal(size=(3, 2, 1, 1)), "b": np.array([np.pi]), "g": np.zeros(1)}
    io.save_checkpoint(tmp_path / "m.aseg", state)
    back = io.load_checkpoint(tmp_path / "m.aseg")
    assert list(back) == list(state)
    assert all(back[k].tobytes() == state[k].tobytes() for k in state)


def test_flipped_byte_is_detected(tmp_path, rng):
    blob = bytearray(io.encode_checkpoint({"a": rng.normal(size=10)}))
    for pos in (0, 9, 30, len(blob) - 20, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 0x01
        with pytest.raises(IntegrityError):
            io.decode_checkpoint(bytes(bad))


def test_truncated_and_duplicate_entries(rng):
    blob = io.encode_checkpoint({"a": np.ones(2)})
    with pytest.raises(IntegrityError):
        io.decode_checkpoint(blob[:-3])
    entry = struct.pack("<I", 1) + b"a" + struct.pack("<BII", 1, 1, 1) + struct.pack("<d", 1.0)
    body = b"ASEG1" + struct.pack("<II", 1, 2) + entry + entry
    with pytest.raises(IntegrityError, match="duplicate"):
        io.decode_checkpoint(body + hashlib.blake2b(body, digest_size=8).digest())


def test_missing_checkpoint(tmp_path):
    with pytest.raises(IntegrityError):
        io.load_checkpoint(tmp_path / "nope.aseg")


def test_loaded_checkpoint_reproduces_inference(tmp_path, trained, small_cfg, synth8):
    io.save_checkpoint(tmp_path / "m.aseg", trained.state())
    cfg = InferenceConfig(base_scales=(32,), multiples=(1.0, 1.5))
    a = multiscale_infer(trained, synth8[0].image, cfg)[1]
    b = multiscale_infer(load_model(tmp_path / "m.aseg", small_cfg), synth8[0].image, cfg)[1]
    assert np.array_equal(a, b)

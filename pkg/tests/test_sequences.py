import numpy as np
import pytest

from buddytrack.geometry import BoundingBox
from buddytrack.sequences import (
    SequenceBundle,
    SequenceFormatError,
    SynthSpec,
    load_sequence,
    synth_sequence,
    write_sequence,
)


class TestSynthSequence:
    def test_zero_motion_constant_boxes(self):
        seq = synth_sequence(SynthSpec(n_frames=10, velocity_x=0, velocity_y=0, seed=0))
        assert all(b == seq.groundtruth[0] for b in seq.groundtruth)

    def test_linear_motion_translates_exactly(self):
        seq = synth_sequence(
            SynthSpec(n_frames=20, velocity_x=2.0, velocity_y=0.0, seed=0)
        )
        xs = [b.x for b in seq.groundtruth]
        assert np.allclose(np.diff(xs), 2.0)

    def test_occlusion_covers_requested_fraction(self):
        base = SynthSpec(n_frames=12, velocity_x=0, velocity_y=0, noise=0, seed=5)
        occluded = SynthSpec(
            n_frames=12,
            velocity_x=0,
            velocity_y=0,
            noise=0,
            seed=5,
            occlusion_windows=[(4, 8, 0.4)],
        )
        clean_seq = synth_sequence(base)
        occ_seq = synth_sequence(occluded)
        for t in range(4, 8):
            box = occ_seq.groundtruth[t]
            y, x, h, w = int(box.y), int(box.x), int(box.h), int(box.w)
            clean = clean_seq.frame(t)[y : y + h, x : x + w].astype(int)
            occ = occ_seq.frame(t)[y : y + h, x : x + w].astype(int)
            changed = np.any(np.abs(clean - occ) > 8, axis=2).mean()
            assert changed >= 0.30
        # outside the window the frames agree
        np.testing.assert_array_equal(clean_seq.frame(0), occ_seq.frame(0))

    def test_deterministic_per_seed(self):
        a = synth_sequence(SynthSpec(n_frames=5, seed=9))
        b = synth_sequence(SynthSpec(n_frames=5, seed=9))
        for k in range(5):
            np.testing.assert_array_equal(a.frame(k), b.frame(k))

    def test_scale_oscillation_changes_box_size(self):
        seq = synth_sequence(
            SynthSpec(n_frames=30, scale_amplitude=0.1, scale_period=20, seed=1)
        )
        widths = {b.w for b in seq.groundtruth}
        assert len(widths) > 1
        assert max(widths) <= 40 * 1.1 + 1 and min(widths) >= 40 * 0.9 - 1


class TestSequenceIo:
    def test_roundtrip(self, tmp_path):
        seq = synth_sequence(SynthSpec(n_frames=4, seed=2))
        write_sequence(seq, tmp_path / "toy")
        loaded = load_sequence(tmp_path / "toy")
        assert len(loaded) == 4
        for a, b in zip(loaded.groundtruth, seq.groundtruth):
            assert a.x == pytest.approx(b.x, abs=0.01)
            assert a.w == pytest.approx(b.w, abs=0.01)
        np.testing.assert_array_equal(loaded.frame(0), seq.frame(0))

    def test_two_frame_fixture(self, tmp_path):
        d = tmp_path / "mini"
        (d / "img").mkdir(parents=True)
        from PIL import Image

        for k in (1, 2):
            Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(
                d / "img" / f"{k:04d}.png"
            )
        (d / "groundtruth_rect.txt").write_text("1,1,4,4\n2,2,4,4\n")
        bundle = load_sequence(d)
        assert len(bundle.groundtruth) == 2
        assert bundle.groundtruth[0].x == 0.0  # converted to 0-based

    def test_malformed_line_reports_number(self, tmp_path):
        d = tmp_path / "bad"
        (d / "img").mkdir(parents=True)
        from PIL import Image

        for k in range(1, 4):
            Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(
                d / "img" / f"{k:04d}.png"
            )
        (d / "groundtruth_rect.txt").write_text("1,1,4,4\n2,2,4,4\n3,3,nope,4\n")
        with pytest.raises(SequenceFormatError, match="line 3"):
            load_sequence(d)

    def test_whitespace_and_comma_parse_identically(self, tmp_path):
        from PIL import Image

        for name, sep in (("commas", ","), ("tabs", "\t"), ("spaces", " ")):
            d = tmp_path / name
            (d / "img").mkdir(parents=True)
            for k in (1, 2):
                Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(
                    d / "img" / f"{k:04d}.png"
                )
            (d / "groundtruth_rect.txt").write_text(
                f"1{sep}2{sep}4{sep}5\n3{sep}4{sep}4{sep}5\n"
            )
        a = load_sequence(tmp_path / "commas").groundtruth
        b = load_sequence(tmp_path / "tabs").groundtruth
        c = load_sequence(tmp_path / "spaces").groundtruth
        assert a == b == c

    def test_count_mismatch(self, tmp_path):
        d = tmp_path / "mismatch"
        (d / "img").mkdir(parents=True)
        from PIL import Image

        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "img" / "0001.png")
        (d / "groundtruth_rect.txt").write_text("1,1,4,4\n2,2,4,4\n")
        with pytest.raises(SequenceFormatError):
            load_sequence(d)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sequence(tmp_path / "nope")

    def test_bundle_validation(self):
        with pytest.raises(SequenceFormatError):
            SequenceBundle(
                name="x",
                groundtruth=[BoundingBox(0, 0, 1, 1)],
                images=[np.zeros((4, 4, 3), dtype=np.uint8)],
            )

import io

import numpy as np
import pytest

from specpipe.errors import IoFailure
from specpipe.render import (
    VIRIDIS,
    apply_colormap,
    clamp_top_db,
    decode_png,
    encode_png,
    export_png,
    image_filename,
    normalize,
    quantize,
    read_png,
    to_image,
)
from specpipe.stft_mel import mel_mono3, mel_single

Image = pytest.importorskip("PIL.Image")


def test_normalize_examples():
    assert np.all(normalize(np.full((1, 4, 5), -37.0)) == 0)
    np.testing.assert_allclose(normalize(np.array([-80.0, -40.0, 0.0]), "fixed", (-80, 0)), [0, 0.5, 1])
    assert normalize(np.array([-100.0]), "fixed", (-80, 0))[0] == 0
    x = normalize(np.array([[3.0, 5.0, 4.0]]))
    np.testing.assert_allclose(x, [[0, 1, 0.5]])


def test_clamp_top_db():
    np.testing.assert_array_equal(clamp_top_db(np.array([-100.0, -50.0, 0.0]), 80), [-80, -50, 0])


def test_quantize_rounding():
    assert quantize(np.array([0.0, 1.0, 0.5, 0.5 / 255, 0.49 / 255])).tolist() == [0, 255, 128, 1, 0]


def test_colormap_endpoints():
    img = apply_colormap(np.array([[1.0, 0.5, 0.0]]))
    px = img.pixels[0]
    assert px[0].tolist() == VIRIDIS[255].tolist()
    assert px[1].tolist() == VIRIDIS[128].tolist()
    assert px[2].tolist() == VIRIDIS[0].tolist()


def test_table_matches_reference_viridis():
    cm = pytest.importorskip("matplotlib").colormaps["viridis"]
    ref = np.round(cm(np.arange(256))[:, :3] * 255).astype(np.uint8)
    diff = np.abs(VIRIDIS.astype(int) - ref)
    assert diff.max() <= 1 and np.count_nonzero(diff) == 2


def test_luminance_monotone():
    lum = VIRIDIS.astype(float) @ np.array([0.2126, 0.7152, 0.0722])
    assert np.all(np.diff(lum) >= 0)


def test_low_frequencies_at_bottom():
    plane = np.zeros((4, 3))
    plane[0] = 1.0  # lowest frequency row
    img = apply_colormap(plane)
    assert img.pixels[-1, 0].tolist() == VIRIDIS[255].tolist()
    assert img.pixels[0, 0].tolist() == VIRIDIS[0].tolist()


def test_png_decodes_with_independent_reader(tmp_path, rng):
    px = rng.integers(0, 256, size=(7, 11, 3), dtype=np.uint8)
    export_png(px, tmp_path / "a.png", {"config_hash": "abc"})
    with Image.open(tmp_path / "a.png") as im:
        np.testing.assert_array_equal(np.asarray(im), px)
        assert im.text["config_hash"] == "abc"
    np.testing.assert_array_equal(read_png(tmp_path / "a.png"), px)


def test_one_pixel_gray(tmp_path):
    data = encode_png(np.array([[200]], dtype=np.uint8))
    with Image.open(io.BytesIO(data)) as im:
        assert im.mode == "L" and im.size == (1, 1) and im.getpixel((0, 0)) == 200


def test_decoder_handles_all_filters(rng):
    px = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    px[:8] //= 7  # some structure so the encoder picks varied filters
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG", optimize=True)
    np.testing.assert_array_equal(decode_png(buf.getvalue()), px)


def test_export_failure(tmp_path):
    with pytest.raises(IoFailure):
        export_png(np.zeros((2, 2), dtype=np.uint8), tmp_path / "missing" / "a.png")


def test_mono3_channel_mapping_and_dimensions(rng):
    x = rng.normal(size=48000) * 0.1
    m3 = mel_mono3(x, 16000)
    ms = mel_single(x, 16000, 2048, 512)
    a, b = to_image(m3), to_image(ms)
    assert a.pixels.shape == b.pixels.shape == (128, 90, 3)
    norm = normalize(m3)
    for k in range(3):
        np.testing.assert_array_equal(a.pixels[:, :, k], quantize(norm[k])[::-1])


def test_render_deterministic(rng):
    x = rng.normal(size=48000)
    t = mel_single(x, 16000)
    assert encode_png(to_image(t).pixels) == encode_png(to_image(mel_single(x.copy(), 16000)).pixels)


def test_image_filename():
    assert image_filename("P001_vowel_a_0", 1500, "mel_mono3") == "P001_vowel_a_0_1500_mel_mono3.png"

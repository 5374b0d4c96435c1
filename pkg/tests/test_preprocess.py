import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from facepipe.errors import CorruptHeader, DegenerateEyes, InvalidAnnotation, UnsupportedFormat
from facepipe.preprocess import (
    CropParams,
    EyeAnnotation,
    Image,
    equalization_map,
    geometric_normalize,
    histogram_equalize,
    load_image,
    read_eye_annotations,
    save_image,
    source_to_crop,
)

images = arrays(
    np.uint8,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.integers(0, 255),
).map(Image)


def test_load_p5_bytes(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_image(p)
    assert (img.width, img.height) == (2, 2)
    assert img.data.tolist() == [0, 255, 128, 64]


def test_load_pgm_with_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5 # made by hand\n# another\n3 1 255\n" + bytes([1, 2, 3]))
    assert load_image(p).data.tolist() == [1, 2, 3]


def test_p6_rejected(tmp_path):
    p = tmp_path / "color.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([1, 2, 3]))
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_16bit_pgm_rejected(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n" + bytes([1, 2]))
    with pytest.raises(UnsupportedFormat):
        load_image(p)


def test_truncated_body(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([1, 2, 3]))
    with pytest.raises(CorruptHeader):
        load_image(p)


@pytest.mark.parametrize("header", [b"P5\n2\n", b"P5\nx 2 255\n", b"P5\n0 2 255\n"])
def test_bad_headers(tmp_path, header):
    p = tmp_path / "h.pgm"
    p.write_bytes(header)
    with pytest.raises(CorruptHeader):
        load_image(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.pgm")


def test_png_grayscale(tmp_path):
    px = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    PILImage.fromarray(px, mode="L").save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert np.array_equal(img.pixels, px)


@pytest.mark.parametrize("mode", ["RGB", "I;16"])
def test_png_non_gray_rejected(tmp_path, mode):
    PILImage.new(mode, (3, 3)).save(tmp_path / "x.png")
    with pytest.raises(UnsupportedFormat):
        load_image(tmp_path / "x.png")


@given(images)
@settings(max_examples=40, deadline=None)
def test_pgm_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("rt") / "img.pgm"
    save_image(img, p)
    assert load_image(p) == img
    raw = p.read_bytes()
    save_image(load_image(p), p)
    assert p.read_bytes() == raw


def test_image_invariants():
    with pytest.raises(ValueError):
        Image.from_data(2, 2, [1, 2, 3])
    with pytest.raises(ValueError):
        Image(np.array([[0.0, 256.0]]))


# --- histogram equalization ---------------------------------------------------


def test_equalize_constant_image_goes_to_zero():
    img = Image(np.full((5, 7), 77, np.uint8))
    assert np.all(histogram_equalize(img).pixels == 0)


def test_equalize_two_pixels():
    # cdf(0)=1=cdf_min, cdf(255)=2=N: 0 -> 0, 255 -> round(255*1/1) = 255
    img = Image.from_data(2, 1, [0, 255])
    assert histogram_equalize(img).data.tolist() == [0, 255]


def test_equalize_uniform_ramp_is_near_identity():
    ramp = Image.from_data(16, 16, np.arange(256))
    out = histogram_equalize(ramp)
    assert np.max(np.abs(out.data.astype(int) - np.arange(256))) <= 1


def test_equalize_formula_by_hand():
    # values 10,10,20,30 -> hist: 10:2, 20:1, 30:1; cdf 2,3,4; cdf_min=2, N=4
    # 20 -> 255 * (3 - 2) / (4 - 2) = 127.5, rounded half up
    img = Image.from_data(4, 1, [10, 10, 20, 30])
    assert histogram_equalize(img).data.tolist() == [0, 0, 128, 255]


@given(images)
@settings(max_examples=100, deadline=None)
def test_equalize_idempotent_within_one(img):
    once = histogram_equalize(img)
    twice = histogram_equalize(once)
    assert np.max(np.abs(once.pixels.astype(int) - twice.pixels.astype(int))) <= 1


@given(images)
@settings(max_examples=100, deadline=None)
def test_equalize_preserves_order(img):
    lut = equalization_map(img)
    present = np.unique(img.pixels)
    assert np.all(np.diff(lut[present].astype(int)) >= 0)
    out = histogram_equalize(img)
    a, b = img.data.astype(int), out.data.astype(int)
    order = np.argsort(a, kind="stable")
    assert np.all(np.diff(b[order]) >= 0)


# --- geometric normalization ---------------------------------------------------


def test_identity_crop_copies_subwindow():
    rng = np.random.default_rng(0)
    src = Image(rng.integers(0, 256, (40, 50), dtype=np.uint8))
    params = CropParams(target_width=20, target_height=24, inter_eye_distance=10, eye_row=8)
    # target eyes at (5, 8) and (15, 8); place the source eyes at an integer offset
    ox, oy = 13, 9
    eyes = EyeAnnotation("s", "i", (5 + ox, 8 + oy), (15 + ox, 8 + oy))
    out = geometric_normalize(src, eyes, params)
    assert np.array_equal(out.pixels, src.pixels[oy : oy + 24, ox : ox + 20])


def test_tilted_eyes_map_to_horizontal_line():
    params = CropParams()
    eyes = EyeAnnotation("s", "i", (60.0, 90.0), (140.0, 80.0))
    (lx, rx), (ly, ry) = source_to_crop(eyes, params, [60.0, 140.0], [90.0, 80.0])
    assert abs(ly - ry) < 0.5
    assert abs(ly - params.eye_row) < 1e-9
    assert abs((rx - lx) - params.inter_eye_distance) < 1e-9


def test_tilted_eyes_rendered_dots_land_on_eye_row():
    """Render dark dots at tilted eye positions; after registration they sit on one row."""
    h, w = 160, 200
    yy, xx = np.mgrid[0:h, 0:w]
    left, right = (70.0, 90.0), (130.0, 80.0)
    px = np.full((h, w), 200.0)
    for cx, cy in (left, right):
        px -= 150 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 2.0**2))
    params = CropParams(100, 110, 40, 35)
    out = geometric_normalize(Image(np.clip(px, 0, 255)), EyeAnnotation("s", "i", left, right), params)
    dark = 255.0 - out.pixels.astype(float)
    dark[dark < 60] = 0
    ys, xs = np.mgrid[0:110, 0:100]
    halves = xs < 50
    rows = [
        (dark * ys)[mask].sum() / dark[mask].sum()
        for mask in (halves, ~halves)
    ]
    assert abs(rows[0] - rows[1]) < 0.5
    assert abs(rows[0] - 35) < 0.5


def test_output_size_independent_of_input():
    params = CropParams(31, 17, 10, 5)
    for shape in [(20, 20), (300, 100), (64, 250)]:
        src = Image(np.zeros(shape, np.uint8))
        eyes = EyeAnnotation("s", "i", (2, 3), (12, 5))
        out = geometric_normalize(src, eyes, params)
        assert (out.width, out.height) == (31, 17)


def test_degenerate_eyes():
    src = Image(np.zeros((20, 20), np.uint8))
    with pytest.raises(DegenerateEyes):
        geometric_normalize(src, EyeAnnotation("s", "i", (5, 5), (5, 5)))
    with pytest.raises(DegenerateEyes):
        geometric_normalize(src, EyeAnnotation("s", "i", (5, 5), (6, 5)))


def test_eyes_outside_image():
    src = Image(np.zeros((20, 20), np.uint8))
    with pytest.raises(InvalidAnnotation):
        geometric_normalize(src, EyeAnnotation("s", "i", (5, 5), (25, 5)))
    with pytest.raises(InvalidAnnotation):
        geometric_normalize(src, EyeAnnotation("s", "i", (15, 5), (5, 5)))


def test_border_clamp():
    src = Image(np.full((10, 10), 42, np.uint8))
    params = CropParams(40, 40, 20, 20)
    out = geometric_normalize(src, EyeAnnotation("s", "i", (3, 4), (6, 4)), params)
    assert np.all(out.pixels == 42)


def test_read_eye_csv(tmp_path):
    p = tmp_path / "eyes.csv"
    p.write_text("subject_id,image_id,lx,ly,rx,ry\ns1,a.pgm,10,20,30,21\n")
    ann = read_eye_annotations(p)
    assert ann[("s1", "a.pgm")].right_eye == (30.0, 21.0)
    p.write_text("s1,a.pgm,10,20\n")
    with pytest.raises(InvalidAnnotation):
        read_eye_annotations(p)

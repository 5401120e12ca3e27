import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import render  # noqa: E402

SAMPLES = Path(__file__).resolve().parents[1] / "sample_data"
FIGURES = sorted(render.RENDERERS)


@pytest.mark.parametrize("figure", FIGURES)
def test_renders_every_preset_sample(figure, tmp_path):
    out = render.render(figure, SAMPLES / f"{figure}.csv",
                        tmp_path / f"{figure}.pdf")
    assert out.exists()
    assert out.stat().st_size > 1000


@pytest.mark.parametrize("figure", FIGURES)
def test_byte_identical_re_render(figure, tmp_path):
    a = render.render(figure, SAMPLES / f"{figure}.csv", tmp_path / "a.pdf")
    b = render.render(figure, SAMPLES / f"{figure}.csv", tmp_path / "b.pdf")
    assert a.read_bytes() == b.read_bytes()


def test_svg_output_also_deterministic(tmp_path):
    a = render.render("fig5", SAMPLES / "fig5.csv", tmp_path / "a.svg")
    b = render.render("fig5", SAMPLES / "fig5.csv", tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_empty_csv_is_an_error(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("beta,lam,z,mu_mean,mu_lo,mu_hi\n")
    with pytest.raises(SystemExit):
        render.render("fig2", empty, tmp_path / "out.pdf")
    assert not (tmp_path / "out.pdf").exists()


def test_schema_mismatch_names_columns(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("beta,lam\n5.0,0.0\n")
    with pytest.raises(SystemExit, match="mu_mean"):
        render.render("fig2", bad, tmp_path / "out.pdf")


def test_unknown_figure(tmp_path):
    with pytest.raises(SystemExit, match="fig2"):
        render.render("fig99", SAMPLES / "fig2.csv", tmp_path / "out.pdf")


def test_cli_entry(tmp_path, capsys):
    assert render.main(["--figure", "fig3",
                        "--input", str(SAMPLES / "fig3.csv"),
                        "--output", str(tmp_path / "fig3.pdf")]) == 0
    assert "wrote" in capsys.readouterr().out

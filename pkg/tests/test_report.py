import math

import pytest

from streetshift.analysis import ChannelStatsRow, MetricRow
from streetshift.report import (
    HIGH_TO_LOW, LOW_TO_HIGH, fmt, metric_dump, parse_report, read_metric_dump, render_report,
)

# Per-direction values as tabulated for the five outcomes: (MSE, PSNR, SSIM) low->high, high->low,
# and the tabulated averages.
TABLE_SIMILARITY = {
    "Density": ((942, 19.0, 0.57), (1151, 18.0, 0.55), (1047, 18.5, 0.56)),
    "Park / city": ((2191, 15.1, 0.59), (1149, 17.9, 0.65), (1670, 16.5, 0.62)),
    "General health": ((811, 19.6, 0.63), (1055, 18.5, 0.61), (933, 19.0, 0.62)),
    "Social capital": ((893, 19.0, 0.58), (876, 19.2, 0.60), (885, 19.1, 0.59)),
    "Life satisfaction": ((695, 20.1, 0.65), (673, 20.4, 0.64), (684, 20.3, 0.64)),
}


def sim_rows():
    rows = []
    for label, (lh, hl, _) in TABLE_SIMILARITY.items():
        rows.append(MetricRow(label, LOW_TO_HIGH, 0.5, *lh))
        rows.append(MetricRow(label, HIGH_TO_LOW, 0.5, *hl))
    return rows


def test_fmt_rounds_half_up():
    assert fmt(1046.5, 0) == "1047"
    assert fmt(884.5, 0) == "885"
    assert fmt(0.125, 2) == "0.13"
    assert fmt(-17.75, 1) == "-17.8"
    assert fmt(None, 1) == "n/a"


def test_single_row_gives_header_and_one_line():
    text = render_report([MetricRow("x", LOW_TO_HIGH, 0.25, 1.0, 48.1, 0.9)], "csv", "change")
    assert text.splitlines() == ["label,low_to_high,high_to_low", "x,25.0%,"]


def test_similarity_layout_markdown():
    lines = render_report(sim_rows()[:2], "markdown", "similarity").splitlines()
    assert lines[0] == ("|  | Low to high | Low to high | Low to high | High to low | High to low | High to low "
                        "| Average | Average | Average |")
    assert lines[1].startswith("|---|---:|")
    assert lines[2] == "|  | MSE | PSNR | SSIM | MSE | PSNR | SSIM | MSE | PSNR | SSIM |"
    assert lines[3] == "| Density | 942 | 19.0 | 0.57 | 1151 | 18.0 | 0.55 | 1047 | 18.5 | 0.56 |"


def test_similarity_csv_header():
    header = render_report(sim_rows()[:2], "csv", "similarity").splitlines()[0]
    assert header == ("label,low_to_high_mse,low_to_high_psnr,low_to_high_ssim,high_to_low_mse,high_to_low_psnr,"
                      "high_to_low_ssim,average_mse,average_psnr,average_ssim")


def test_average_mse_group_matches_tabulated_values():
    parsed = {r[0]: r for r in (line.split(",") for line in
                                render_report(sim_rows(), "csv", "similarity").splitlines()[1:])}
    for label, (_, _, avg) in TABLE_SIMILARITY.items():
        assert parsed[label][7] == str(avg[0])


def test_average_psnr_ssim_from_rounded_inputs():
    # The tabulated averages were taken before rounding; two of them cannot be recovered from the
    # rounded per-direction values, which is expected.
    parsed = {r[0]: r for r in (line.split(",") for line in
                                render_report(sim_rows(), "csv", "similarity").splitlines()[1:])}
    mismatched = []
    for label, (_, _, avg) in TABLE_SIMILARITY.items():
        if parsed[label][8] != f"{avg[1]:.1f}" or parsed[label][9] != f"{avg[2]:.2f}":
            mismatched.append(label)
    assert mismatched == ["General health", "Life satisfaction"]


def test_one_direction_only_average_is_that_direction():
    text = render_report([MetricRow("x", HIGH_TO_LOW, 0.1, 500.0, 21.0, 0.7)], "csv", "similarity")
    assert text.splitlines()[1] == "x,,,,500,21.0,0.70,500,21.0,0.70"


def test_colour_table_layout():
    row = ChannelStatsRow("Park to city", (114.2, 116.4, 108.4), (93.9, 93.4, 90.7), (-17.8, -19.8, -16.3))
    md = render_report([row], "markdown", "colour").splitlines()
    assert md[2] == "|  | Red | Green | Blue | Red | Green | Blue | Red | Green | Blue |"
    assert md[3] == "| Park to city | 114 | 116 | 108 | 94 | 93 | 91 | -17.8 | -19.8 | -16.3 |"
    csv_text = render_report([row], "csv", "colour").splitlines()
    assert csv_text[0].startswith("label,original_red,original_green")
    assert "difference_pct_blue" in csv_text[0]


def test_undefined_channel_marker():
    row = ChannelStatsRow("x", (0.0, 1.0, 2.0), (1.0, 1.0, 2.0), (None, 0.0, 0.0))
    assert "n/a" in render_report([row], "csv", "colour")
    back = parse_report(render_report([row], "csv", "colour"), "colour")[0]
    assert back.difference_pct[0] is None


def test_markdown_and_csv_hold_identical_values():
    rows = sim_rows()
    md = render_report(rows, "markdown", "similarity").splitlines()[3:]
    cs = render_report(rows, "csv", "similarity").splitlines()[1:]
    for m, c in zip(md, cs):
        assert [x.strip() for x in m.strip("|").split("|")] == c.split(",")


def test_csv_round_trip_at_display_precision():
    rows = [MetricRow("a", LOW_TO_HIGH, 0.532, math.nan, math.nan, math.nan),
            MetricRow("a", HIGH_TO_LOW, 0.578, math.nan, math.nan, math.nan)]
    back = parse_report(render_report(rows, "csv", "change"), "change")
    assert [(r.label, r.direction, r.change_proportion) for r in back] == [
        ("a", LOW_TO_HIGH, pytest.approx(0.532)), ("a", HIGH_TO_LOW, pytest.approx(0.578))]

    rows = sim_rows()
    back = parse_report(render_report(rows, "csv", "similarity"), "similarity")
    assert [(r.label, r.direction, r.mse, r.psnr, r.ssim) for r in back] == [
        (r.label, r.direction, r.mse, r.psnr, r.ssim) for r in rows]

    crow = ChannelStatsRow("x", (114.0, 116.0, 108.0), (94.0, 93.0, 91.0), (-17.8, -19.5, -16.3))
    assert parse_report(render_report([crow], "csv", "colour"), "colour") == [crow]


def test_metric_dump_round_trip_full_precision():
    rows = [MetricRow("d", LOW_TO_HIGH, 1 / 3, 942.123456789, 18.3912345, 0.5712345, 7),
            ChannelStatsRow("c", (1 / 7, 2.0, 3.0), (4.0, 5.0, 6.0), (None, 1.5, 2 / 3))]
    back = read_metric_dump(metric_dump(rows))
    values = {(d, m): v for d, m, v in back}
    assert values[("d: low to high", "change_proportion")] == 1 / 3
    assert values[("d: low to high", "mse")] == 942.123456789
    assert values[("c", "original_r")] == 1 / 7
    assert values[("c", "difference_pct_r")] is None
    assert values[("c", "difference_pct_b")] == 2 / 3


def test_render_rejects_bad_arguments():
    with pytest.raises(ValueError):
        render_report([], "csv")
    with pytest.raises(ValueError):
        render_report(sim_rows(), "html", "similarity")
    with pytest.raises(ValueError):
        render_report(sim_rows(), "csv", "nope")

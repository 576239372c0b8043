import pytest
from hypothesis import given
from hypothesis import strategies as st

from plate_bench.labels import (
    ALPHABET,
    PlateFormat,
    PlateLabel,
    PlateLayout,
    normalize_label,
    plate_char,
)

ALPHABET_SET = set(ALPHABET)


def test_alphabet_has_36_classes():
    assert len(ALPHABET) == 36
    assert len(ALPHABET_SET) == 36


def test_plate_char_folds_lowercase():
    assert plate_char("a") == "A"
    assert plate_char("7") == "7"


@pytest.mark.parametrize("bad", ["", "ab", "-", "ä", " "])
def test_plate_char_rejects_non_alphabet(bad):
    with pytest.raises(ValueError):
        plate_char(bad)


def test_normalize_strips_spaces_and_folds_case():
    label = normalize_label("wvl 9335")
    assert label.chars == "WVL9335"
    assert label.raw == "wvl 9335"


def test_normalize_keeps_prose_characters():
    # chatty replies need token extraction first; normalization alone keeps prose
    assert normalize_label("The plate reads: PJG-90.").chars == "THEPLATEREADSPJG90"


def test_normalize_empty_is_empty_label():
    label = normalize_label("")
    assert label.chars == "" and not label


def test_label_rejects_out_of_alphabet_chars():
    with pytest.raises(ValueError):
        PlateLabel(chars="AB-12")


@given(st.text(max_size=60))
def test_normalize_output_alphabet(raw):
    assert set(normalize_label(raw).chars) <= ALPHABET_SET


@given(st.text(max_size=60))
def test_normalize_idempotent(raw):
    once = normalize_label(raw)
    assert normalize_label(once.chars).chars == once.chars


def test_format_counts_validated():
    with pytest.raises(ValueError):
        PlateFormat(letters=0)
    with pytest.raises(ValueError):
        PlateFormat(digits=0)


def test_format_matches_letters_then_digits():
    fmt = PlateFormat(PlateLayout.SINGLE_LINE, letters=3, digits=4)
    assert fmt.matches("ABC1234")
    assert not fmt.matches("AB11234")  # digit where a letter belongs
    assert not fmt.matches("ABC123")  # wrong length
    assert not fmt.matches("1234ABC")

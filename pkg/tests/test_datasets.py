import pytest

from metacv.datasets import available_datasets, load_dataset, parse_dataset
from metacv.errors import ParseError, ValidationError

GOOD = """# factor grp: a, b
study,yi,vi,x,grp
s1,0.1,0.02,1.5,a
s2,-0.3,0.05,2.0,b
s3,0.2,0.04,3.5,a
"""


def test_bcg_bundle(bcg):
    assert bcg.k == 13
    assert [m.name for m in bcg.schema] == ["ablat", "allocation"]
    assert bcg.level_counts("allocation") == {"random": 7, "alternate": 2, "systematic": 4}


@pytest.mark.xfail(strict=True, reason="HAART study data are not bundled (no source reachable at build time)")
def test_haart_bundle():
    assert load_dataset("haart").k == 13


def test_listing_reports_presence():
    listing = {name: present for name, _, present in available_datasets()}
    assert listing == {"bcg": True, "haart": False}


def test_schema_block():
    d = parse_dataset(GOOD)
    assert d.moderator("grp").levels == ("a", "b")
    assert not d.moderator("x").is_factor
    assert [s.label for s in d.studies] == ["s1", "s2", "s3"]


def test_factor_flag_without_levels_uses_first_appearance():
    d = parse_dataset(GOOD.replace("# factor grp: a, b\n", ""), factors=["grp"])
    assert d.moderator("grp").levels == ("a", "b")


def test_zero_variance_names_row():
    with pytest.raises(ValidationError, match="row 3"):
        parse_dataset(GOOD.replace("-0.3,0.05", "-0.3,0"))


def test_parse_error_location():
    with pytest.raises(ParseError) as exc:
        parse_dataset(GOOD.replace("2.0,b", "2;0,b"))
    assert exc.value.row == 3 and exc.value.column == "x"


def test_comma_decimal_rejected():
    with pytest.raises(ParseError):
        parse_dataset('yi,vi\n"0,5",0.1\n0.2,0.1\n')


def test_missing_column_and_unknown_factor():
    with pytest.raises(ParseError):
        parse_dataset("yi,x\n0.1,1\n")
    with pytest.raises(ValidationError):
        parse_dataset(GOOD, factors=["nope"])


def test_undeclared_level_rejected():
    with pytest.raises(ValidationError, match="level 'c'"):
        parse_dataset(GOOD.replace("3.5,a", "3.5,c"))


def test_unknown_file():
    with pytest.raises(ValidationError):
        load_dataset("/nonexistent/file.csv")

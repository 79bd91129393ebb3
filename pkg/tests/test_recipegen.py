import pytest

from pkgbridge.depgraph import ExclusionKind, ExclusionReason
from pkgbridge.metadata import DepSpec, PackageRecord, VersionString, parse_packages_index
from pkgbridge.recipegen import (
    ExcludedPackage,
    NameTransform,
    UnresolvedPlaceholder,
    generate,
    system_name,
    write_recipe,
)
from pkgbridge.sysreqs import NeedsCuration, Requirements, SysreqsEntry, load_db


@pytest.fixture
def units(fixtures):
    return parse_packages_index((fixtures / "tiny.PACKAGES").read_text())[1]


@pytest.fixture
def sysdb(fixtures):
    return load_db((fixtures / "sysreqs.tsv").read_text())


class TestSystemName:
    def test_fedora(self):
        assert system_name("units", "R-CRAN-", NameTransform.IDENTITY) == "R-CRAN-units"

    def test_debian(self):
        assert system_name("units", "r-cran-", "lowercase") == "r-cran-units"
        assert system_name("Rcpp", "r-cran-", "lowercase") == "r-cran-rcpp"

    def test_empty_prefix(self):
        assert system_name("Rcpp", "", NameTransform.IDENTITY) == "Rcpp"

    def test_identity_is_invertible(self):
        assert system_name("MASS", "R-CRAN-").removeprefix("R-CRAN-") == "MASS"


class TestGenerate:
    def test_units(self, units, sysdb):
        r = generate(units, sysdb.get("units"), prefix="R-CRAN-", release=3)
        assert r.system_name == "R-CRAN-units"
        assert r.upstream_name == "units"
        assert r.version == "0.6.7"
        assert {"R-CRAN-Rcpp", "udunits2"} <= set(r.requires)
        assert {"R-CRAN-Rcpp", "udunits2-devel"} <= set(r.build_requires)
        assert "udunits2-devel" not in r.requires
        assert r.install_prefix == "/usr/local/lib/R/library"
        assert r.filename == "R-CRAN-units.spec"

    def test_golden(self, units, sysdb, fixtures):
        r = generate(units, sysdb.get("units"), release=3)
        assert r.body == (fixtures / "golden" / "R-CRAN-units.spec").read_text()

    def test_verbatim_fields_in_body(self, units, sysdb):
        body = generate(units, sysdb.get("units")).body
        assert "License:          GPL-2\n" in body
        assert "%global packname units\n" in body
        assert "Version:          0.6.7\n" in body
        # raw version only inside the upstream tarball name
        assert body.count("0.6-7") == 1 and "units_0.6-7.tar.gz" in body

    def test_files_by_single_directory(self, units, sysdb):
        body = generate(units, sysdb.get("units")).body
        files = body.split("%files\n", 1)[1].strip().splitlines()
        assert files == ["%{rlibdir}/%{packname}"]

    def test_no_deps_no_sysreqs(self):
        rec = PackageRecord("p", VersionString("1.0"), license="MIT")
        r = generate(rec, None)
        assert r.requires == ("R-core",)

    def test_base_and_r_dropped(self):
        rec = PackageRecord(
            "p", VersionString("1.0"),
            depends=(DepSpec("R", ">=", VersionString("3.5")), DepSpec("methods")),
            imports=(DepSpec("MASS"),),
        )
        assert generate(rec, None).requires == ("R-CRAN-MASS", "R-core")

    def test_linking_to_build_only(self):
        rec = PackageRecord("p", VersionString("1"), linking_to=(DepSpec("BH"),))
        r = generate(rec, None)
        assert "R-CRAN-BH" in r.build_requires and "R-CRAN-BH" not in r.requires

    def test_toolchain_never_emitted(self):
        rec = PackageRecord("p", VersionString("1"), system_requirements="GNU make")
        entry = SysreqsEntry("p", {"*": Requirements(frozenset({"make", "pandoc"}), frozenset({"pandoc"}))})
        r = generate(rec, entry)
        assert "make" not in r.build_requires and "pandoc" in r.build_requires

    def test_unresolved_placeholder(self, units, sysdb):
        with pytest.raises(UnresolvedPlaceholder):
            generate(units, sysdb.get("units"), template="Name: {{name}}\n{{bogus}}\n")

    def test_excluded(self, sysdb):
        rec = PackageRecord("gifski", VersionString("0.8.6"), system_requirements="Cargo")
        with pytest.raises(ExcludedPackage):
            generate(rec, sysdb.get("gifski"))
        with pytest.raises(ExcludedPackage):
            generate(PackageRecord("x", VersionString("1")), None,
                     exclusion=ExclusionReason(ExclusionKind.DEPENDS_ON_EXCLUDED, "gifski"))

    def test_needs_curation(self):
        rec = PackageRecord("xml2", VersionString("1.3.2"), system_requirements="libxml2")
        with pytest.raises(NeedsCuration):
            generate(rec, None)

    def test_needs_curation_for_uncovered_distro(self, units, sysdb):
        with pytest.raises(NeedsCuration):
            generate(units, sysdb.get("units"), distro="arch")

    def test_lowercase_transform(self, units, sysdb):
        r = generate(units, sysdb.get("units"), prefix="r-cran-", transform="lowercase", distro="debian")
        assert r.system_name == "r-cran-units"
        assert {"r-cran-rcpp", "libudunits2-0"} <= set(r.requires)

    @pytest.mark.parametrize("prefix", ["/usr/lib/R/library", "/usr/local/lib/R/site-library"])
    def test_install_prefix_enforced(self, units, sysdb, prefix):
        with pytest.raises(ValueError):
            generate(units, sysdb.get("units"), install_prefix=prefix)

    def test_release_positive(self, units, sysdb):
        with pytest.raises(ValueError):
            generate(units, sysdb.get("units"), release=0)

    def test_deterministic(self, units, sysdb):
        assert generate(units, sysdb.get("units")) == generate(units, sysdb.get("units"))


def test_write_recipe_idempotent(units, sysdb, tmp_path):
    r = generate(units, sysdb.get("units"))
    path = write_recipe(r, tmp_path)
    assert path.name == "R-CRAN-units.spec"
    mtime = path.stat().st_mtime_ns
    assert write_recipe(r, tmp_path) == path
    assert path.stat().st_mtime_ns == mtime
    assert path.read_text() == r.body

import pytest

from lsw.data import Corpus, LabelIndex, SyntheticSpec, gen_synthetic


def synthetic_corpus(**kw) -> Corpus:
    syn = gen_synthetic(SyntheticSpec(**kw))
    return Corpus(syn.records, LabelIndex(syn.spec.label_names()), syn.section_names)


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(n_docs=120, n_classes=4, seed=3, section_length=8)


_CRITERIA: dict[str, tuple[bool, str]] = {}


def record_criterion(key: str, ok: bool, detail: str) -> None:
    _CRITERIA[key] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")

import os

import pytest

from mvpcrawl.cli import bundled_captcha_rules, bundled_suffix_table

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


@pytest.fixture(scope="session")
def suffix_table():
    return bundled_suffix_table()


@pytest.fixture(scope="session")
def captcha_rules():
    return bundled_captcha_rules()


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def golden_path(name: str) -> str:
    return os.path.join(GOLDEN_DIR, name)

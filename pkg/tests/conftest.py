from __future__ import annotations

import logging

import pytest
from hypothesis import settings

from hnkdv_control.config import ExperimentConfig
from hnkdv_control.experiments import Setup

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_conditioning(caplog):
    caplog.set_level(logging.ERROR, logger="hnkdv_control.control")


@pytest.fixture(scope="session")
def canonical():
    """Canonical setup with the synthesis operator assembled once."""
    st = Setup.from_config(ExperimentConfig())
    st.operator
    return st

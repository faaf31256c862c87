import pytest

from longthought.client import CompletionCache, EndpointConfig, InferenceClient
from longthought.corpus import CorpusStore


@pytest.fixture
def store(tmp_path):
    return CorpusStore(tmp_path / "store")


@pytest.fixture
def cache(tmp_path):
    return CompletionCache(tmp_path / "cache")


def make_client(base_url: str, cache=None, **kw) -> InferenceClient:
    defaults = {"model": "mock-model", "timeout": 10.0,
                "max_retries": 2, "backoff_base": 0.01}
    defaults.update(kw)
    return InferenceClient(EndpointConfig(base_url=base_url, **defaults),
                           cache=cache)


@pytest.fixture
def client_factory():
    return make_client

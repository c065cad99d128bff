"""
Test configuration and fixtures.
"""

import asyncio
from typing import AsyncGenerator, Generator, List

import pytest
import pytest_asyncio
from httpx import AsyncClient, ASGITransport

from app.core.model_store import get_checkpoint
from app.main import app
from app.schemas.corpus import ParagraphRecord
from app.schemas.experiment import ModelConfig, TrainConfig
from app.services.corpus import generate_synthetic
from app.services.textprep import clean_records
from app.services.tokenizer import build_vocab
from app.services.trainer import encode_records, train


@pytest.fixture(scope="session")
def event_loop() -> Generator[asyncio.AbstractEventLoop, None, None]:
    """Create an instance of the default event loop for the test session."""
    loop = asyncio.get_event_loop_policy().new_event_loop()
    yield loop
    loop.close()


@pytest.fixture
def sample_records() -> List[ParagraphRecord]:
    """Five labeled records covering every original label."""
    rows = [
        ("1", "@@100", "homeless", "gb", "Council opens new shelter beds for the homeless.", 0),
        ("2", "@@101", "refugee", "us", "These poor refugees need our help and our pity!", 3),
        ("3", "@@102", "women", "in", "The report covers women in the workforce in 2019.", 1),
        ("4", "@@103", "in-need", "ke", "We must be a voice for families in need.", 2),
        ("5", "@@104", "vulnerable", "au", "Let us give hope to the vulnerable this winter.", 4),
    ]
    return [
        ParagraphRecord(
            par_id=par_id,
            art_id=art_id,
            keyword=keyword,
            country=country,
            text=text,
            orig_label=label,
            binary_label=int(label >= 2),
        )
        for par_id, art_id, keyword, country, text, label in rows
    ]


@pytest.fixture(scope="session")
def synthetic_corpus() -> List[ParagraphRecord]:
    """Cleaned, balanced 32-record synthetic corpus."""
    records, _ = clean_records(generate_synthetic(32, 0.5, seed=7))
    return records


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """Smallest model used by gradient checks."""
    return ModelConfig(
        vocab_size=32,
        d_model=16,
        n_heads=2,
        d_ff=32,
        n_layers_enc=2,
        n_layers_dec=2,
        max_rel_distance=4,
        max_seq_len=16,
        seed=0,
    )


@pytest.fixture(scope="session")
def trained_checkpoint(synthetic_corpus):
    """A small model trained on the synthetic corpus (dev = train)."""
    vocab = build_vocab((r.text for r in synthetic_corpus), 200)
    examples = encode_records(synthetic_corpus, vocab, 32)
    model_config = ModelConfig(
        vocab_size=len(vocab), d_model=32, n_heads=2, d_ff=64, max_seq_len=32, seed=1
    )
    train_config = TrainConfig(
        peak_lr=5e-3, epochs=40, batch_size=8, seed=1, track_out_of_class=False
    )
    return train(model_config, train_config, examples, examples, vocab)


@pytest_asyncio.fixture(scope="function")
async def client() -> AsyncGenerator[AsyncClient, None]:
    """Test client with no checkpoint served."""
    app.dependency_overrides[get_checkpoint] = lambda: None

    transport = ASGITransport(app=app)
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac

    app.dependency_overrides.clear()


@pytest_asyncio.fixture(scope="function")
async def serving_client(trained_checkpoint) -> AsyncGenerator[AsyncClient, None]:
    """Test client serving the trained checkpoint."""
    app.dependency_overrides[get_checkpoint] = lambda: trained_checkpoint

    transport = ASGITransport(app=app)
    async with AsyncClient(transport=transport, base_url="http://test") as ac:
        yield ac

    app.dependency_overrides.clear()

import pytest
import torch

from promptclass.encoder import EncoderConfig
from promptclass.tokenizer import train_vocab

torch.set_num_threads(1)

FIXTURE_CORPUS = [
    "int a;", "int b;", "int main(){return 0;}", "int c = a + b;", "return a;",
    "It was [MASK] . int a;", "It was [MASK] . return b;",
    "Just [MASK] ! int c;", "Just [MASK] ! // TODO",
    "int a; In summary , it was [MASK] .", "return 0; In summary , it was [MASK] .",
    "int b; All in all , it was [MASK] .", "int c; All in all , it was [MASK] .",
]


@pytest.fixture(scope="session")
def fixture_vocab():
    return train_vocab(FIXTURE_CORPUS, 120)


@pytest.fixture
def tiny_config():
    return EncoderConfig(vocab_size=40, d_model=8, n_layers=2, n_heads=2, d_ffn=16, max_len=12,
                         dropout_rate=0.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

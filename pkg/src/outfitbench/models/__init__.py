"""Model families and the registry keyed by family name."""

from .base import (
    FAMILIES,
    ActionContext,
    Example,
    ModelConfig,
    OutfitModel,
    examples_from_outfits,
    examples_from_users,
    make_example,
    questionnaire_tokens,
)
from .bert import BERTModel
from .gpt import GPTModel
from .lstm import LSTMModel, Seq2SeqLSTMModel
from .siamese import SiameseModel, interaction_vector
from .transformer import TransformerModel

REGISTRY = {
    "siamese": SiameseModel,
    "lstm": LSTMModel,
    "gpt": GPTModel,
    "ctx_gpt": GPTModel,
    "bert": BERTModel,
    "ctx_bert": BERTModel,
    "transformer": TransformerModel,
    "s2s_lstm": Seq2SeqLSTMModel,
}


def build_model(config: ModelConfig, vocab, catalog, seed: int) -> OutfitModel:
    return REGISTRY[config.family](config, vocab, catalog, seed)


__all__ = [
    "FAMILIES", "REGISTRY", "ActionContext", "BERTModel", "Example", "GPTModel", "LSTMModel",
    "ModelConfig", "OutfitModel", "Seq2SeqLSTMModel", "SiameseModel", "TransformerModel",
    "build_model", "examples_from_outfits", "examples_from_users", "interaction_vector",
    "make_example", "questionnaire_tokens",
]

"""CTC sequence-transduction toolkit for end-to-end speech recognition.

Log-spectrogram features, character / Myanmar-syllable / BPE label encodings,
CTC loss and decoding, a small bidirectional recurrent acoustic model, and
CER/SER scoring.
"""

from .corpus import AudioClip, CorpusSplit, Utterance, load_manifest, read_wav, split_corpus, write_wav
from .ctc import (
    CtcResult,
    beam_search_decode,
    brute_force_ctc,
    collapse_alignment,
    ctc_loss,
    ctc_loss_from_scores,
    ctc_validity,
    greedy_decode,
)
from .features import FeatureConfig, FeatureMatrix, downsample_time, log_spectrogram
from .metrics import EditCounts, cer, edit_distance, ser
from .model import ModelParams, TrainConfig, forward, load_model, save_model, train
from .tokenize import (
    BpeModel,
    Vocabulary,
    bpe_decode,
    bpe_encode,
    bpe_train,
    build_vocab,
    char_tokenize,
    syllable_tokenize,
)

__version__ = "0.1.0"

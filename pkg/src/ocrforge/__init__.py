"""ocrforge: a bilingual (Korean/English) OCR-augmented VQA toolkit.

Submodules map one-to-one onto the toolkit's concerns:

    metrics    character error rate, word accuracy, normalization profiles
    detect     probability-map post-processing into scored text boxes
    pipeline   crop, reading order, recognizer backends, OCR documents
    wire       the recognizer backend wire protocol (client, stub, checks)
    prompting  base vs OCR-augmented prompt construction
    vlm        chat-completions client with retries and replay stores
    benchmark  dataset loading, scoring, error taxonomy, reports
    dataprep   page annotations -> cropped (image, text) pairs and splits
    cli        the ocrforge command
"""

__version__ = "0.1.0"

from .metrics import (  # noqa: F401
    EXACT_NFC,
    STR_BENCHMARK,
    CerResult,
    NormProfile,
    cer,
    corpus_cer,
    edit_distance,
    normalize,
    word_accuracy,
)

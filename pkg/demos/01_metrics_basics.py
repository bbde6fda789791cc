"""Walk through the text metrics: normalization profiles, edit distance,
CER (which can exceed 100%), corpus aggregation, and word accuracy.

Run: python demos/01_metrics_basics.py
"""

from ocrforge.metrics import (
    EXACT_NFC,
    STR_BENCHMARK,
    cer,
    corpus_cer,
    edit_distance,
    normalize,
    word_accuracy,
)

print("== Normalization profiles ==")
print("Two profiles ship by default:")
print("  exact-nfc      composed Unicode, case and whitespace preserved")
print("  str-benchmark  folded, latin alphanumerics only, whitespace stripped")
print()
decomposed = "한"  # the jamo sequence for 한
print(f"decomposed jamo {[hex(ord(c)) for c in decomposed]}"
      f" -> {normalize(decomposed, EXACT_NFC)!r} (one composed syllable)")
print(f"'Ab-C!' under str-benchmark -> {normalize('Ab-C!', STR_BENCHMARK)!r}")
print()

print("== Edit distance ==")
for a, b in [("kitten", "sitting"), ("간판", "간빤"), ("서울", "서울특별시")]:
    print(f"  d({a!r}, {b!r}) = {edit_distance(a, b)}")
print()

print("== Character error rate ==")
r = cer("서울특별시", "서울")
print(f"pred '서울특별시' vs ref '서울': distance {r.distance}, ref_len {r.ref_len},"
      f" CER {r.cer:.1%}  <- CER above 100% is legal and meaningful")
print()

print("== Corpus aggregation (micro vs macro) ==")
pairs = [("카페라떼", "카페라테"), ("가", "가게문앞"), ("same", "same")]
print(f"  micro: {corpus_cer(pairs):.4f}   (sum of distances / sum of lengths)")
print(f"  macro: {corpus_cer(pairs, average='macro'):.4f}   (mean of per-pair CERs)")
print()

print("== Word accuracy ==")
english = [("Coffee", "coffee"), ("SHOP", "shop"), ("teh", "the")]
print(f"  English pairs, str-benchmark profile: {word_accuracy(english, STR_BENCHMARK):.1%}")
korean = [("홍길동", "홍길동"), ("홍길 동", "홍길동")]
print(f"  Korean pairs, exact-nfc (spacing matters): {word_accuracy(korean, EXACT_NFC):.1%}")

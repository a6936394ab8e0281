"""How many label combinations satisfy a weak label, for each theory."""

from nesyprune import abduce_hwf, abduce_max, abduce_sum
from nesyprune.abduction import HWF_CLASS_NAMES

print("sum of two digits = 8:", abduce_sum(2, 8))
print("sum of two digits = 2:", abduce_sum(2, 2))

# The pre-image count of a sum is symmetric around the middle target.
for m in (2, 3, 4):
    counts = [len(abduce_sum(m, s)) for s in range(9 * m + 1)]
    print(f"sum, {m} digits: peak {max(counts)} pre-images at target {counts.index(max(counts))}")

# max grows as (t+1)^m - t^m: every digit <= t and at least one equal to t.
for m in (2, 4):
    print(f"max of {m} digits = 9: {len(abduce_max(m, 9))} pre-images")


def render(labels):
    return "".join(HWF_CLASS_NAMES[v] for v in labels)


# Formulas alternate digits 1..9 and operators; * binds tighter than + and -.
print("3-symbol formulas equal to 2:", [render(p) for p in abduce_hwf(3, 2)])
print("5-symbol formulas equal to 81:", len(abduce_hwf(5, 81)))

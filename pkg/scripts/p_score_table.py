"""Recompute P from the published component columns and compare with the printed P."""

from multitask_affect.metrics import p_score
from multitask_affect.published import P_TOLERANCE, PUBLISHED_ROWS


def main() -> None:
    width = max(len(r.label) for r in PUBLISHED_ROWS)
    print(f"{'setting':<12}{'row':<{width + 2}}{'computed':>9}{'printed':>9}{'diff':>9}  within")
    for r in PUBLISHED_ROWS:
        p = p_score(*r.inputs)
        diff = p - r.printed_p
        print(f"{r.setting:<12}{r.label:<{width + 2}}{p:9.4f}{r.printed_p:9.3f}{diff:+9.4f}  {abs(diff) <= P_TOLERANCE}")


if __name__ == "__main__":
    main()

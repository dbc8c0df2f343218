"""Measure IR, II and Inv for each erasure mode and compare with the expected table."""

from datacase.checker import EXPECTED_TABLE, characterize_all


def main():
    mark = {True: "yes", False: "no"}
    bad = 0
    for row in characterize_all():
        got = (row.IR, row.II, row.Inv)
        flag = "" if got == EXPECTED_TABLE[row.mode] else "  <- differs"
        bad += bool(flag)
        cells = " ".join(f"{mark[v]:<4}" for v in got).rstrip()
        print(f"{row.mode.value:<26}{cells}{flag}")
    raise SystemExit(1 if bad else 0)


if __name__ == "__main__":
    main()

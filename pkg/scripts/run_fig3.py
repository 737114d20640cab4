"""Major versus minor profile accuracy across mixture ratios.

The major profile is deconvolved with the minor one known at 1:1, 3:1 and 10:1;
the minor profile is deconvolved with the major one known at 1:1, 10:1 and 100:1.

    python scripts/run_fig3.py --replicates 10
"""

from _common import log_record, parser, write_outputs

from mixdeconv import benchmarks as B


def main() -> None:
    p = parser(__doc__.splitlines()[0], "fig3")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--nu", type=float, default=1500.0)
    a = p.parse_args()
    recs = B.fig3(replicates=a.replicates, nu=a.nu, seed=a.seed, threads=a.threads, log=log_record)
    write_outputs(a.out, recs)


if __name__ == "__main__":
    main()

"""Number of sub-populations at a fixed total population size (minor profile known).

    python scripts/run_table2.py --subpops 1 2 4 8 --replicates 5 --threads 2
"""

from _common import log_record, parser, write_outputs

from mixdeconv import benchmarks as B


def main() -> None:
    p = parser(__doc__.splitlines()[0], "table2")
    p.add_argument("--subpops", type=int, nargs="+", default=[1, 2, 4, 8])
    p.add_argument("--total", type=int, default=200)
    p.add_argument("--replicates", type=int, default=5)
    p.set_defaults(threads=2)
    a = p.parse_args()
    recs = B.table2(n_subpops=a.subpops, total=a.total, replicates=a.replicates, seed=a.seed, threads=a.threads,
                    log=log_record)
    write_outputs(a.out, recs)


if __name__ == "__main__":
    main()

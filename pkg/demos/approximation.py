"""Build sigmoid networks for sin(2x) from its piecewise Taylor polynomial.

For each grid size K the script prints the sup error of the smoothed Taylor
polynomial and of the compiled network, plus the network's size.  Both errors
should drop about fourfold per doubling of K (p = 2).
"""
from overparam_net import construct, taylor


def main():
    f = taylor.sin_target(2.0, d=1, p=2.0)
    print(f"{'K':>3} {'subnets':>8} {'L':>2} {'r':>3} {'sup|f-Pbar|':>12} {'sup|f-net|':>11}")
    prev = None
    for K in (4, 8, 16):
        net = construct.assemble_taylor_net(f, K)
        pbar = construct.sup_error(lambda X: taylor.eval_Pbar(net.pieces, X), f)
        err = construct.sup_error(net, f)
        ratio = "" if prev is None else f"  ratio {err / prev:.3f}"
        print(f"{K:>3} {len(net.blueprints):>8} {net.L:>2} {net.r:>3} {pbar:>12.4e} {err:>11.4e}{ratio}")
        prev = err


if __name__ == "__main__":
    main()

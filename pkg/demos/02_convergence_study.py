# %% [markdown]
# Manufactured solutions and observed orders of convergence for the three
# pressure stabilizations and both polynomial degrees.

# %%
from stabfem import StabilizationConfig, run_convergence

# %%
def show(title, table):
    print(f"\n{title}")
    print(f"{'n':>4} {'|u-uh|_L2':>11} {'|u-uh|_H1':>11} {'|p-ph|_L2':>11}   eoc(L2, H1, p)")
    for r in table.rows:
        eoc = "" if r["eoc_u_l2"] is None else f"{r['eoc_u_l2']:.2f} {r['eoc_u_h1']:.2f} {r['eoc_p_l2']:.2f}"
        print(f"{r['n']:4d} {r['eu_l2']:11.3e} {r['eu_h1']:11.3e} {r['ep_l2']:11.3e}   {eoc}")
    if table.failure:
        print("stopped:", table.failure)

# %% [markdown]
# P1, Stokes. bh has no tunable constant; lps needs the macro-patch hierarchy,
# which run_convergence builds automatically.

# %%
for kind in ("bp", "bh", "lps"):
    show(f"stokes_trig, k=1, {kind}", run_convergence("stokes_trig", (8, 16, 32), stabilization=StabilizationConfig(kind)))

# %% [markdown]
# Navier-Stokes at mu = 0.1, with and without velocity stabilization.

# %%
for vkind in ("none", "lps", "supg"):
    cfg = StabilizationConfig("bp", vkind)
    show(f"nse_trig, mu=0.1, bp + {vkind}", run_convergence("nse_trig", (8, 16, 32), mu=0.1, stabilization=cfg))

# %% [markdown]
# P2 with bp, and the unstabilized failure for comparison.

# %%
show("stokes_trig, k=2, bp", run_convergence("stokes_trig", (4, 8, 16), k=2, stabilization=StabilizationConfig("bp")))
show("stokes_trig, k=1, none", run_convergence("stokes_trig", (8, 16), stabilization=StabilizationConfig("none")))

# %%
print(run_convergence("gstokes_div", (8, 16, 32)).to_csv())

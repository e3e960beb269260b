# Regenerates bessel_reference.csv with 50-digit mpmath evaluations.
#   python3 gen_bessel_reference.py > bessel_reference.csv
import mpmath as mp

mp.mp.dps = 50

orders = [0.0, 0.5, 1.0, 1.5, 2.0, 4.0, 9.5, 14.0, 49.0, 149.0]
kappas = [1e-6, 1e-3, 0.1, 1.0, 5.0, 19.9, 20.0, 35.0, 100.0, 1e3, 1e4, 1e5, 1e6]
dims = [2, 3, 4, 5, 10, 30, 100, 200, 300]

print("kind,order,kappa,value")
for v in orders:
    for k in kappas:
        val = mp.log(mp.besseli(mp.mpf(v), mp.mpf(k)))
        print("log_i,%r,%r,%s" % (v, k, mp.nstr(val, 20)))
for p in dims:
    for k in kappas:
        nu = mp.mpf(p) / 2
        val = mp.besseli(nu, k) / mp.besseli(nu - 1, k)
        print("ratio,%d,%r,%s" % (p, k, mp.nstr(val, 20)))
for p in dims:
    for k in kappas:
        nu = mp.mpf(p) / 2
        val = 1 - mp.besseli(nu, k) / mp.besseli(nu - 1, k)
        print("complement,%d,%r,%s" % (p, k, mp.nstr(val, 20)))

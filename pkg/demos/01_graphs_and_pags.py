"""Mixed graphs, m-separation and the PAG of a MAG.

A latent confounder between two variables shows up as a bidirected edge.
This walk-through builds a small ancestral graph, checks a few
independence statements, closes an inducing path with the maximal
projection and prints the equivalence-class summary (PAG).
"""
from spotmag.graph import (Admg, is_ancestral, is_maximal, m_separated, mag_to_pag,
                           maximal_ancestral_projection)
from spotmag.graph import MARK_NAMES

# 0 -> 1 <-> 2 <- 3, plus 2 -> 4: a collider at 1 and a confounded pair (1, 2)
g = Admg.from_edges(5, directed=[(0, 1), (3, 2), (2, 4)], bidirected=[(1, 2)])
print(g, "ancestral:", is_ancestral(g), "maximal:", is_maximal(g))

print("0 _||_ 3            :", m_separated(g, 0, 3))
print("0 _||_ 3 | {1}      :", m_separated(g, 0, 3, [1]))
print("0 _||_ 3 | {1, 2}   :", m_separated(g, 0, 3, [1, 2]))
print("0 _||_ 4 | {2}      :", m_separated(g, 0, 4, [2]))

# a bow (directed plus bidirected edge on one pair) is not ancestral
print("bow ancestral:", is_ancestral(Admg.from_edges(2, [(0, 1)], [(0, 1)])))

# colliders that are ancestors of the endpoints form an inducing path, so the
# projection adds an edge between the non-adjacent endpoints 0 and 3
h = Admg.from_edges(4, directed=[(1, 3), (2, 0)], bidirected=[(0, 1), (1, 2), (2, 3)])
print("\nnon-maximal:", h, "->", maximal_ancestral_projection(h))

pag = mag_to_pag(g)
print("\nPAG edges (mark at i, mark at j):")
for e in pag.to_dict()["edges"]:
    print(f"  {e['i']} {e['mark_at_i']:>6s} --- {e['mark_at_j']:<6s} {e['j']}")

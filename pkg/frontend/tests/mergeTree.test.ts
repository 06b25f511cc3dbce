import { describe, expect, it } from "vitest";
import type { MergeTreeJson } from "../src/api.js";
import { cutTree, rootOf } from "../src/mergeTree.js";

/** Chain tree over 6 leaves mirroring the service's merge order. */
function chainTree(): MergeTreeJson {
  // merges: (0,1)->6 (2,6)->7 (3,4)->8 (5,8)->9 (7,9)->10
  return {
    n_leaves: 6,
    nodes: [
      { left: 0, right: 1, cost: 0.1, count: 2 },
      { left: 2, right: 6, cost: 0.2, count: 3 },
      { left: 3, right: 4, cost: 0.15, count: 2 },
      { left: 5, right: 8, cost: 0.25, count: 3 },
      { left: 7, right: 9, cost: 0.9, count: 6 },
    ],
  };
}

describe("cutTree", () => {
  it("k=1 puts every face in one cluster", () => {
    const cut = cutTree(chainTree(), 1);
    expect(Array.from(cut.labels)).toEqual([0, 0, 0, 0, 0, 0]);
  });

  it("k=2 undoes exactly the last merge", () => {
    const cut = cutTree(chainTree(), 2);
    expect(Array.from(cut.labels)).toEqual([0, 0, 0, 1, 1, 1]);
  });

  it("k = leaf count yields singletons with first-occurrence labels", () => {
    const cut = cutTree(chainTree(), 6);
    expect(Array.from(cut.labels)).toEqual([0, 1, 2, 3, 4, 5]);
  });

  it("cuts nest: every finer cluster sits inside one coarser cluster", () => {
    const tree = chainTree();
    for (let k = 1; k < 6; k++) {
      const coarse = cutTree(tree, k).labels;
      const fine = cutTree(tree, k + 1).labels;
      const parent = new Map<number, number>();
      for (let f = 0; f < 6; f++) {
        const known = parent.get(fine[f]);
        if (known === undefined) {
          parent.set(fine[f], coarse[f]);
        } else {
          expect(known).toBe(coarse[f]);
        }
      }
    }
  });

  it("child parts inherit the parent's hue band", () => {
    const tree = chainTree();
    const coarse = cutTree(tree, 2);
    const fine = cutTree(tree, 4);
    // cluster of face 0 at k=4 descends from cluster of face 0 at k=2
    for (let f = 0; f < 6; f++) {
      const parentHue = coarse.hues[coarse.labels[f]];
      const childHue = fine.hues[fine.labels[f]];
      // parent band is half the hue circle here; the child stays inside it
      expect(Math.abs(childHue - parentHue)).toBeLessThan(0.5);
    }
  });

  it("rejects out-of-range k", () => {
    expect(() => cutTree(chainTree(), 0)).toThrow();
    expect(() => cutTree(chainTree(), 7)).toThrow();
  });

  it("single-leaf tree has itself as root", () => {
    const tree: MergeTreeJson = { n_leaves: 1, nodes: [] };
    expect(rootOf(tree)).toBe(0);
    expect(Array.from(cutTree(tree, 1).labels)).toEqual([0]);
  });
});

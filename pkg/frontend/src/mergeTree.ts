/**
 * Client-side cuts of the server's merge hierarchy.
 *
 * Node ids mirror the service: leaves are 0..F-1, internal node F+i is
 * the i-th merge, children always have lower ids. Cutting to k clusters
 * undoes the last k-1 merges, so dragging the granularity slider never
 * needs a server round trip, and cuts nest across k by construction.
 * Labels are canonicalized by first face occurrence to match the
 * /segment endpoint exactly.
 */

import type { MergeTreeJson } from "./api.js";

export interface Cut {
  k: number;
  labels: Int32Array;
  /** hue in [0, 1) per cluster label; children stay inside the parent's hue band */
  hues: Float32Array;
}

function leavesUnder(tree: MergeTreeJson, node: number, out: number[]): void {
  const stack = [node];
  while (stack.length) {
    const n = stack.pop()!;
    if (n < tree.n_leaves) {
      out.push(n);
    } else {
      const rec = tree.nodes[n - tree.n_leaves];
      stack.push(rec.left, rec.right);
    }
  }
}

export function rootOf(tree: MergeTreeJson): number {
  return tree.nodes.length ? tree.n_leaves + tree.nodes.length - 1 : 0;
}

export function cutTree(tree: MergeTreeJson, k: number): Cut {
  if (k < 1 || k > tree.n_leaves) {
    throw new Error(`k=${k} outside [1, ${tree.n_leaves}]`);
  }
  // active node id -> hue interval [lo, hi); splitting divides the parent
  // band proportionally to subtree size, so finer parts keep their family hue
  const counts = new Map<number, number>();
  const countOf = (node: number): number => {
    if (node < tree.n_leaves) return 1;
    return tree.nodes[node - tree.n_leaves].count;
  };
  const bands = new Map<number, [number, number]>();
  const active: number[] = [rootOf(tree)];
  bands.set(active[0], [0, 1]);
  while (active.length < k) {
    let best = -1;
    let bestIdx = -1;
    for (let i = 0; i < active.length; i++) {
      if (active[i] > best) {
        best = active[i];
        bestIdx = i;
      }
    }
    const rec = tree.nodes[best - tree.n_leaves];
    const [lo, hi] = bands.get(best)!;
    const span = hi - lo;
    const leftShare = countOf(rec.left) / (countOf(rec.left) + countOf(rec.right));
    active.splice(bestIdx, 1, rec.left, rec.right);
    bands.delete(best);
    bands.set(rec.left, [lo, lo + span * leftShare]);
    bands.set(rec.right, [lo + span * leftShare, hi]);
  }

  const labels = new Int32Array(tree.n_leaves).fill(-1);
  const nodeHue = new Map<number, number>();
  for (const node of active) {
    const [lo, hi] = bands.get(node)!;
    nodeHue.set(node, (lo + hi) / 2);
    const leaves: number[] = [];
    leavesUnder(tree, node, leaves);
    for (const leaf of leaves) {
      labels[leaf] = node;
    }
  }
  // canonicalize by first occurrence, carrying hue along
  const remap = new Map<number, number>();
  const hues: number[] = [];
  for (let f = 0; f < labels.length; f++) {
    const node = labels[f];
    let lab = remap.get(node);
    if (lab === undefined) {
      lab = remap.size;
      remap.set(node, lab);
      hues.push(nodeHue.get(node)!);
    }
    labels[f] = lab;
  }
  return { k, labels, hues: new Float32Array(hues) };
}

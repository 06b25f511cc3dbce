/**
 * Serializable UI state. A page reload restores the loaded shape list,
 * tool, granularity, anchor, and annotations from localStorage; entries
 * that no longer satisfy the invariants (anchor in range, k within
 * [1, faces], annotated faces existing) are dropped on restore.
 */

export type Tool = "explore" | "segment" | "annotate";

export interface ShapeState {
  shapeId: string;
  nFaces: number;
  anchorFace: number | null;
  k: number;
  annotations: { face: number; class: number }[];
}

export interface ViewerState {
  tool: Tool;
  activeShape: string | null;
  shapes: ShapeState[];
}

export function emptyState(): ViewerState {
  return { tool: "explore", activeShape: null, shapes: [] };
}

export function serializeState(state: ViewerState): string {
  return JSON.stringify(state);
}

export function restoreState(raw: string | null): ViewerState {
  if (!raw) return emptyState();
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    return emptyState();
  }
  if (typeof parsed !== "object" || parsed === null) return emptyState();
  const p = parsed as Partial<ViewerState>;
  const tool: Tool = p.tool === "segment" || p.tool === "annotate" ? p.tool : "explore";
  const shapes: ShapeState[] = [];
  for (const s of Array.isArray(p.shapes) ? p.shapes : []) {
    if (typeof s?.shapeId !== "string" || typeof s?.nFaces !== "number" || s.nFaces < 1) {
      continue;
    }
    const nFaces = Math.floor(s.nFaces);
    const anchor =
      typeof s.anchorFace === "number" && s.anchorFace >= 0 && s.anchorFace < nFaces
        ? Math.floor(s.anchorFace)
        : null;
    const k =
      typeof s.k === "number" && s.k >= 1 && s.k <= nFaces ? Math.floor(s.k) : 1;
    const annotations = (Array.isArray(s.annotations) ? s.annotations : []).filter(
      (a: { face?: unknown; class?: unknown }) =>
        typeof a?.face === "number" &&
        a.face >= 0 &&
        a.face < nFaces &&
        typeof a?.class === "number"
    );
    shapes.push({ shapeId: s.shapeId, nFaces, anchorFace: anchor, k, annotations });
  }
  const activeShape =
    typeof p.activeShape === "string" &&
    shapes.some((s) => s.shapeId === p.activeShape)
      ? p.activeShape
      : shapes[0]?.shapeId ?? null;
  return { tool, activeShape, shapes };
}

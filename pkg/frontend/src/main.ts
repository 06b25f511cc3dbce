/** UI orchestration: tools, shape list, overlays, annotation workflow. */

import { Client, LatestOnly, type MergeTreeJson } from "./api.js";
import {
  categorical,
  fillFaceColors,
  segmentationColors,
  similarityColors,
} from "./colors.js";
import { cutTree } from "./mergeTree.js";
import { parseMeshPayload } from "./meshPayload.js";
import {
  emptyState,
  restoreState,
  serializeState,
  type ShapeState,
  type Tool,
  type ViewerState,
} from "./state.js";
import { ShapeView } from "./viewer.js";

const STORAGE_KEY = "partfield-viewer-state";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  client = new Client(
    new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8421"
  );
  state: ViewerState = emptyState();
  view: ShapeView;
  trees = new Map<string, MergeTreeJson>();
  requests = { explore: new LatestOnly(), segment: new LatestOnly(), coseg: new LatestOnly() };
  nextClass = 1;

  constructor() {
    this.view = new ShapeView(el<HTMLCanvasElement>("canvas"));
    this.state = restoreState(localStorage.getItem(STORAGE_KEY));
    this.bindUi();
    void this.refreshShapes();
  }

  save(): void {
    localStorage.setItem(STORAGE_KEY, serializeState(this.state));
  }

  get activeShape(): ShapeState | undefined {
    return this.state.shapes.find((s) => s.shapeId === this.state.activeShape);
  }

  status(message: string, isError = false): void {
    const bar = el<HTMLDivElement>("status");
    bar.textContent = message;
    bar.className = isError ? "error" : "";
  }

  bindUi(): void {
    for (const tool of ["explore", "segment", "annotate"] as Tool[]) {
      el<HTMLButtonElement>(`tool-${tool}`).onclick = () => this.setTool(tool);
    }
    el<HTMLInputElement>("upload").onchange = (e) => {
      const file = (e.target as HTMLInputElement).files?.[0];
      if (file) void this.upload(file);
    };
    const slider = el<HTMLInputElement>("granularity");
    slider.oninput = () => {
      const shape = this.activeShape;
      if (!shape) return;
      shape.k = Number(slider.value);
      el<HTMLSpanElement>("k-value").textContent = slider.value;
      this.save();
      void this.showSegmentation();
    };
    el<HTMLButtonElement>("clear-annotations").onclick = () => void this.clearAnnotations();
    el<HTMLCanvasElement>("canvas").addEventListener("pointerdown", (e) => {
      if (e.button !== 0 || e.shiftKey) return;
      const rect = (e.target as HTMLCanvasElement).getBoundingClientRect();
      void this.handleClick(e.clientX - rect.left, e.clientY - rect.top);
    });
    this.setTool(this.state.tool);
  }

  setTool(tool: Tool): void {
    this.state.tool = tool;
    this.save();
    for (const t of ["explore", "segment", "annotate"] as Tool[]) {
      el(`tool-${t}`).classList.toggle("active", t === tool);
    }
    el("segment-panel").style.display = tool === "segment" ? "" : "none";
    el("annotate-panel").style.display = tool === "annotate" ? "" : "none";
    if (tool === "segment") void this.showSegmentation();
    if (tool === "annotate") void this.showCoseg();
  }

  async refreshShapes(): Promise<void> {
    try {
      const shapes = await this.client.listShapes();
      const list = el<HTMLUListElement>("shape-list");
      list.innerHTML = "";
      for (const info of shapes) {
        if (!this.state.shapes.some((s) => s.shapeId === info.shape_id)) {
          this.state.shapes.push({
            shapeId: info.shape_id,
            nFaces: info.n_faces,
            anchorFace: null,
            k: Math.min(4, info.n_faces),
            annotations: [],
          });
        }
        const item = document.createElement("li");
        item.textContent = `${info.name} (${info.n_faces} faces)`;
        item.classList.toggle("active", info.shape_id === this.state.activeShape);
        item.onclick = () => void this.selectShape(info.shape_id);
        list.appendChild(item);
      }
      this.state.shapes = this.state.shapes.filter((s) =>
        shapes.some((info) => info.shape_id === s.shapeId)
      );
      this.save();
      if (!this.activeShape && shapes.length) {
        await this.selectShape(shapes[0].shape_id);
      } else if (this.state.activeShape) {
        await this.selectShape(this.state.activeShape);
      }
    } catch (err) {
      this.status(`service unreachable: ${String(err)}`, true);
    }
  }

  async upload(file: File): Promise<void> {
    try {
      this.status(`uploading ${file.name}...`);
      await this.client.uploadShape(file);
      await this.refreshShapes();
      this.status(`loaded ${file.name}`);
    } catch (err) {
      this.status(`upload failed: ${String(err)}`, true);
    }
  }

  async selectShape(shapeId: string): Promise<void> {
    try {
      const payload = await this.client.fetchMeshPayload(shapeId);
      const mesh = parseMeshPayload(payload);
      this.state.activeShape = shapeId;
      const shape = this.activeShape;
      if (shape) shape.nFaces = mesh.nFaces;
      this.save();
      this.view.setMesh(mesh);
      const slider = el<HTMLInputElement>("granularity");
      slider.max = String(mesh.nFaces);
      slider.value = String(this.activeShape?.k ?? 1);
      el<HTMLSpanElement>("k-value").textContent = slider.value;
      await this.restoreAnnotations();
      this.status(`viewing ${shapeId}`);
      if (this.state.tool === "segment") void this.showSegmentation();
    } catch (err) {
      this.status(`mesh load failed: ${String(err)}`, true);
    }
  }

  async restoreAnnotations(): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    try {
      const server = await this.client.annotations(shape.shapeId);
      shape.annotations = server.map((a) => ({ face: a.face, class: a.class }));
      this.nextClass = Math.max(1, ...shape.annotations.map((a) => a.class + 1));
      this.save();
      this.renderAnnotationList();
    } catch {
      /* annotations are optional until the shape has features */
    }
  }

  async handleClick(x: number, y: number): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    const face = this.view.pickFace(x, y);
    if (face === null) return;
    if (this.state.tool === "explore") {
      shape.anchorFace = face;
      this.save();
      await this.showSimilarity(face);
    } else if (this.state.tool === "annotate") {
      const cls = Number(el<HTMLInputElement>("annotation-class").value) || this.nextClass;
      try {
        await this.client.addAnnotation(shape.shapeId, face, cls);
        shape.annotations.push({ face, class: cls });
        this.save();
        this.renderAnnotationList();
        await this.showCoseg();
      } catch (err) {
        this.status(`annotation failed: ${String(err)}`, true);
      }
    }
  }

  async showSimilarity(face: number): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    try {
      const values = await this.requests.explore.run(() =>
        this.client.similarity(shape.shapeId, face)
      );
      if (!values) return; // superseded by a newer click
      const t0 = performance.now();
      const colors = similarityColors(values);
      // ring the clicked face with the colormap maximum
      fillFaceColors(colors, face, [1, 0, 0]);
      this.view.applyFaceColors(colors);
      const ms = performance.now() - t0;
      this.status(`similarity to face ${face} (rendered in ${ms.toFixed(0)} ms)`);
    } catch (err) {
      this.status(`similarity failed: ${String(err)}`, true);
    }
  }

  async showSegmentation(): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    try {
      let tree = this.trees.get(shape.shapeId);
      if (!tree) {
        const fetched = await this.requests.segment.run(() =>
          this.client.hierarchy(shape.shapeId)
        );
        if (!fetched) return;
        tree = fetched;
        this.trees.set(shape.shapeId, tree);
      }
      // slider cuts come from the cached tree: no server round trips
      const cut = cutTree(tree, Math.min(shape.k, tree.n_leaves));
      this.view.applyFaceColors(segmentationColors(cut.labels, cut.hues));
      this.status(`k = ${cut.k} parts (client-side cut)`);
    } catch (err) {
      this.status(`segmentation failed: ${String(err)}`, true);
    }
  }

  renderAnnotationList(): void {
    const shape = this.activeShape;
    const list = el<HTMLUListElement>("annotation-list");
    list.innerHTML = "";
    if (!shape) return;
    for (const a of shape.annotations) {
      const item = document.createElement("li");
      const rgb = categorical(a.class);
      item.innerHTML = `<span class="chip" style="background: rgb(${rgb
        .map((c) => Math.round(c * 255))
        .join(",")})"></span> face ${a.face} &rarr; class ${a.class}`;
      item.onclick = () => void this.removeAnnotation(a.face);
      list.appendChild(item);
    }
  }

  async removeAnnotation(face: number): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    await this.client.deleteAnnotation(shape.shapeId, face);
    shape.annotations = shape.annotations.filter((a) => a.face !== face);
    this.save();
    this.renderAnnotationList();
    await this.showCoseg();
  }

  async clearAnnotations(): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    await this.client.clearAnnotations(shape.shapeId);
    shape.annotations = [];
    this.save();
    this.renderAnnotationList();
    this.view.resetColors();
    this.status("annotations cleared");
  }

  async showCoseg(): Promise<void> {
    const shape = this.activeShape;
    if (!shape) return;
    const classes = new Set(shape.annotations.map((a) => a.class));
    if (classes.size < 2) {
      this.status("annotate at least two classes to cosegment");
      return;
    }
    try {
      const t0 = performance.now();
      const result = await this.requests.coseg.run(() =>
        this.client.coseg(shape.shapeId)
      );
      if (!result) return;
      const colors = segmentationColors(result.labels);
      for (const a of shape.annotations) {
        fillFaceColors(colors, a.face, [1, 1, 1]); // annotated faces ringed white
      }
      this.view.applyFaceColors(colors);
      this.status(
        `cosegmentation over ${result.k} classes in ${(performance.now() - t0).toFixed(0)} ms`
      );
    } catch (err) {
      this.status(`cosegmentation failed: ${String(err)}`, true);
    }
  }
}

new App();

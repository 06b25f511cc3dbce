/**
 * Three.js shape view with exact face picking.
 *
 * Geometry is de-indexed (three vertices per face) so faces take flat
 * colors, and picking renders the same triangles into an offscreen
 * target with the face id encoded in RGB, then reads one pixel: the
 * picked id is exact at any zoom, matching the per-face granularity of
 * the feature field.
 */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import type { MeshData } from "./meshPayload.js";

export class ShapeView {
  readonly renderer: THREE.WebGLRenderer;
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private controls: OrbitControls;
  private mesh: THREE.Mesh | null = null;
  private pickScene = new THREE.Scene();
  private pickMesh: THREE.Mesh | null = null;
  private pickTarget: THREE.WebGLRenderTarget;
  private colorAttr: THREE.BufferAttribute | null = null;
  private baseColors: Float32Array | null = null;
  private nFaces = 0;

  constructor(private canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setPixelRatio(window.devicePixelRatio);
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.01, 100);
    this.camera.position.set(2.2, 1.6, 2.2);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.addEventListener("change", () => this.render());
    this.scene.background = new THREE.Color(0x10141a);
    const key = new THREE.DirectionalLight(0xffffff, 2.0);
    key.position.set(3, 4, 5);
    this.scene.add(key, new THREE.AmbientLight(0xffffff, 0.9));
    this.pickTarget = new THREE.WebGLRenderTarget(1, 1);
    this.resize();
    window.addEventListener("resize", () => this.resize());
  }

  get faceCount(): number {
    return this.nFaces;
  }

  resize(): void {
    const w = this.canvas.clientWidth || 800;
    const h = this.canvas.clientHeight || 600;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.pickTarget.setSize(w, h);
    this.render();
  }

  setMesh(data: MeshData): void {
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
    }
    if (this.pickMesh) {
      this.pickScene.remove(this.pickMesh);
      this.pickMesh.geometry.dispose();
      (this.pickMesh.material as THREE.Material).dispose();
    }
    this.nFaces = data.nFaces;
    const positions = new Float32Array(data.nFaces * 9);
    const pickColors = new Float32Array(data.nFaces * 9);
    for (let f = 0; f < data.nFaces; f++) {
      // face id + 1 in RGB bytes; 0 stays "background"
      const id = f + 1;
      const r = ((id >> 16) & 0xff) / 255;
      const g = ((id >> 8) & 0xff) / 255;
      const b = (id & 0xff) / 255;
      for (let v = 0; v < 3; v++) {
        const vi = data.faces[f * 3 + v];
        positions.set(
          [
            data.positions[vi * 3],
            data.positions[vi * 3 + 1],
            data.positions[vi * 3 + 2],
          ],
          f * 9 + v * 3
        );
        pickColors.set([r, g, b], f * 9 + v * 3);
      }
    }
    this.baseColors = new Float32Array(data.nFaces * 9).fill(0.75);

    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    this.colorAttr = new THREE.BufferAttribute(this.baseColors.slice(), 3);
    geometry.setAttribute("color", this.colorAttr);
    geometry.computeVertexNormals();
    const material = new THREE.MeshLambertMaterial({
      vertexColors: true,
      side: THREE.DoubleSide,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);

    const pickGeometry = new THREE.BufferGeometry();
    pickGeometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    pickGeometry.setAttribute("color", new THREE.BufferAttribute(pickColors, 3));
    this.pickMesh = new THREE.Mesh(
      pickGeometry,
      new THREE.MeshBasicMaterial({ vertexColors: true, side: THREE.DoubleSide })
    );
    this.pickScene.add(this.pickMesh);
    this.render();
  }

  /** Write per-face colors (nFaces * 9 floats) into the live attribute. */
  applyFaceColors(colors: Float32Array): void {
    if (!this.colorAttr) return;
    (this.colorAttr.array as Float32Array).set(colors);
    this.colorAttr.needsUpdate = true;
    this.render();
  }

  resetColors(): void {
    if (this.baseColors) this.applyFaceColors(this.baseColors);
  }

  /** Face id under the given canvas pixel, or null for background. */
  pickFace(x: number, y: number): number | null {
    if (!this.pickMesh) return null;
    const w = this.pickTarget.width;
    const h = this.pickTarget.height;
    this.renderer.setRenderTarget(this.pickTarget);
    const oldBg = this.pickScene.background;
    this.pickScene.background = new THREE.Color(0x000000);
    this.renderer.render(this.pickScene, this.camera);
    this.pickScene.background = oldBg;
    const pixel = new Uint8Array(4);
    const px = Math.floor((x / this.canvas.clientWidth) * w);
    const py = Math.floor((1 - y / this.canvas.clientHeight) * h);
    this.renderer.readRenderTargetPixels(this.pickTarget, px, py, 1, 1, pixel);
    this.renderer.setRenderTarget(null);
    const id = (pixel[0] << 16) | (pixel[1] << 8) | pixel[2];
    return id === 0 ? null : id - 1;
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }
}

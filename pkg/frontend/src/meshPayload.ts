/** Binary mesh payload: "PMSH", u32 version, u32 nv, u32 nf, f32 xyz, u32 faces. */

export interface MeshData {
  nVertices: number;
  nFaces: number;
  positions: Float32Array; // nVertices * 3
  faces: Uint32Array; // nFaces * 3
}

const MAGIC = 0x48534d50; // "PMSH" little-endian

export function parseMeshPayload(buffer: ArrayBuffer): MeshData {
  if (buffer.byteLength < 16) {
    throw new Error("mesh payload too short for its header");
  }
  const view = new DataView(buffer);
  if (view.getUint32(0, true) !== MAGIC) {
    throw new Error("bad mesh payload magic; expected PMSH");
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new Error(`unsupported mesh payload version ${version}`);
  }
  const nVertices = view.getUint32(8, true);
  const nFaces = view.getUint32(12, true);
  const expected = 16 + nVertices * 12 + nFaces * 12;
  if (buffer.byteLength !== expected) {
    throw new Error(
      `mesh payload holds ${buffer.byteLength} bytes, expected ${expected}`
    );
  }
  const positions = new Float32Array(buffer, 16, nVertices * 3);
  const faces = new Uint32Array(buffer, 16 + nVertices * 12, nFaces * 3);
  for (let i = 0; i < faces.length; i++) {
    if (faces[i] >= nVertices) {
      throw new Error(`face index ${faces[i]} out of range`);
    }
  }
  return { nVertices, nFaces, positions, faces };
}

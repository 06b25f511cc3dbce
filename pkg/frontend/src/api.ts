/**
 * Typed client for the /v1 shape-session API. Every displayed value in
 * the viewer traces back to one of these calls; nothing is computed
 * client-side except merge-tree cuts of server-provided hierarchies.
 */

export interface ShapeInfo {
  shape_id: string;
  name: string;
  n_vertices: number;
  n_faces: number;
  has_features: boolean;
}

export interface SegmentationJson {
  k: number;
  labels: number[];
}

export interface MergeTreeNodeJson {
  left: number;
  right: number;
  cost: number;
  count: number;
}

export interface MergeTreeJson {
  n_leaves: number;
  nodes: MergeTreeNodeJson[];
}

export interface Annotation {
  face: number;
  class: number;
}

export interface CosegResponse {
  k: number;
  labels: number[];
  classes: number[];
}

export interface JobStatus {
  status: "queued" | "running" | "done" | "error";
  loss: number | null;
  error?: string;
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

async function check(response: Response): Promise<Response> {
  if (!response.ok) {
    let code = "http_error";
    let message = response.statusText;
    try {
      const body = await response.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, code, message);
  }
  return response;
}

export class Client {
  constructor(public baseUrl: string = "http://127.0.0.1:8421") {}

  private url(path: string): string {
    return `${this.baseUrl}/v1${path}`;
  }

  async listShapes(): Promise<ShapeInfo[]> {
    const r = await check(await fetch(this.url("/shapes")));
    return r.json();
  }

  async uploadShape(file: File): Promise<string> {
    const form = new FormData();
    form.append("file", file);
    const r = await check(
      await fetch(this.url("/shapes"), { method: "POST", body: form })
    );
    return (await r.json()).shape_id;
  }

  async fetchMeshPayload(shapeId: string): Promise<ArrayBuffer> {
    const r = await check(await fetch(this.url(`/shapes/${shapeId}/mesh`)));
    return r.arrayBuffer();
  }

  async similarity(shapeId: string, face: number): Promise<number[]> {
    const r = await check(
      await fetch(this.url(`/shapes/${shapeId}/similarity?face=${face}`))
    );
    return (await r.json()).values;
  }

  async segment(shapeId: string, k: number): Promise<SegmentationJson> {
    const r = await check(
      await fetch(this.url(`/shapes/${shapeId}/segment?k=${k}`))
    );
    return r.json();
  }

  async hierarchy(shapeId: string): Promise<MergeTreeJson> {
    const r = await check(await fetch(this.url(`/shapes/${shapeId}/hierarchy`)));
    return r.json();
  }

  async annotations(shapeId: string): Promise<Annotation[]> {
    const r = await check(await fetch(this.url(`/shapes/${shapeId}/annotations`)));
    return r.json();
  }

  async addAnnotation(shapeId: string, face: number, cls: number): Promise<void> {
    await check(
      await fetch(this.url(`/shapes/${shapeId}/annotations`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ face, class: cls }),
      })
    );
  }

  async deleteAnnotation(shapeId: string, face: number): Promise<void> {
    await check(
      await fetch(this.url(`/shapes/${shapeId}/annotations/${face}`), {
        method: "DELETE",
      })
    );
  }

  async clearAnnotations(shapeId: string): Promise<void> {
    await check(
      await fetch(this.url(`/shapes/${shapeId}/annotations`), { method: "DELETE" })
    );
  }

  async coseg(shapeId: string): Promise<CosegResponse> {
    const r = await check(await fetch(this.url(`/shapes/${shapeId}/coseg`)));
    return r.json();
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    const r = await check(await fetch(this.url(`/jobs/${jobId}`)));
    return r.json();
  }
}

/**
 * Serializes requests per tool: a response is delivered only when no
 * newer request has been issued since, so a slow similarity reply can
 * never overwrite the overlay of a later click.
 */
export class LatestOnly {
  private seq = 0;

  async run<T>(request: () => Promise<T>): Promise<T | undefined> {
    const ticket = ++this.seq;
    const result = await request();
    if (ticket !== this.seq) {
      return undefined; // superseded while in flight
    }
    return result;
  }
}

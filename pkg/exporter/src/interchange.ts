/**
 * Writers for the specxai interchange format: a JSON manifest plus one
 * raw little-endian float32 blob, offsets measured in elements.
 */

import { createHash } from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

export interface TensorRef {
  offset: number;
  shape: number[];
}

export type LayerEntry = Record<string, unknown> & { kind: string };

export interface ModelManifest {
  format_version: number;
  kind: "model";
  name: string;
  input_shape: number[];
  display_shape: number[] | null;
  dtype: "float32";
  blob: string;
  blob_elements: number;
  blob_sha256: string;
  layers: LayerEntry[];
}

export class BlobWriter {
  private chunks: Float32Array[] = [];
  private offset = 0;

  add(values: Float32Array | number[], shape: number[]): TensorRef {
    const flat = values instanceof Float32Array ? values : Float32Array.from(values);
    const count = shape.reduce((a, b) => a * b, 1);
    if (flat.length !== count) {
      throw new Error(`blob chunk length ${flat.length} != shape ${shape}`);
    }
    const ref = { offset: this.offset, shape: [...shape] };
    this.chunks.push(flat);
    this.offset += flat.length;
    return ref;
  }

  get elements(): number {
    return this.offset;
  }

  toBuffer(): Buffer {
    // explicit little-endian writes keep the file portable
    const out = Buffer.alloc(this.offset * 4);
    let pos = 0;
    for (const chunk of this.chunks) {
      for (let i = 0; i < chunk.length; i++) {
        out.writeFloatLE(chunk[i], pos);
        pos += 4;
      }
    }
    return out;
  }
}

function sha256(data: Buffer): string {
  return createHash("sha256").update(data).digest("hex");
}

export function writeModel(
  manifestPath: string,
  name: string,
  inputShape: number[],
  displayShape: number[] | null,
  layers: LayerEntry[],
  blob: BlobWriter,
): void {
  const blobPath = manifestPath.replace(/\.[^.]+$/, ".bin");
  const data = blob.toBuffer();
  const manifest: ModelManifest = {
    format_version: 1,
    kind: "model",
    name,
    input_shape: inputShape,
    display_shape: displayShape,
    dtype: "float32",
    blob: path.basename(blobPath),
    blob_elements: blob.elements,
    blob_sha256: sha256(data),
    layers,
  };
  fs.mkdirSync(path.dirname(manifestPath), { recursive: true });
  fs.writeFileSync(blobPath, data);
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
}

export function writeTensor(
  manifestPath: string,
  values: Float32Array | number[],
  shape: number[],
): void {
  const blob = new BlobWriter();
  blob.add(values, shape);
  const data = blob.toBuffer();
  const blobPath = manifestPath.replace(/\.[^.]+$/, ".bin");
  const manifest = {
    format_version: 1,
    kind: "tensor",
    dtype: "float32",
    shape: [...shape],
    blob: path.basename(blobPath),
    blob_elements: blob.elements,
    blob_sha256: sha256(data),
  };
  fs.mkdirSync(path.dirname(manifestPath), { recursive: true });
  fs.writeFileSync(blobPath, data);
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");
}

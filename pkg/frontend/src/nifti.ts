/** Minimal single-file NIfTI-1 reader for the exported tumor tensors.
 *
 * Supports 3D volumes with datatypes uint8 (2), int16 (4), float32 (16),
 * either byte order, with scl_slope/scl_inter scaling. Data is returned in
 * row-major [x][y][z] order (z fastest), ready for channels-last tensors.
 */

import * as fs from "fs";
import { MissingFile, SchemaMismatch } from "./errors";

export interface NiftiVolume {
  dims: [number, number, number];
  /** Voxel values in row-major [x][y][z] order (z fastest). */
  values: Float32Array;
  voxelSize: [number, number, number];
}

const HEADER_SIZE = 348;

export function readNifti(path: string): NiftiVolume {
  if (!fs.existsSync(path)) {
    throw new MissingFile(`no such file: ${path}`);
  }
  const buf = fs.readFileSync(path);
  if (buf.length < HEADER_SIZE + 4) {
    throw new SchemaMismatch(`${path}: shorter than a NIfTI-1 header`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);

  let little = true;
  if (view.getInt32(0, true) !== HEADER_SIZE) {
    if (view.getInt32(0, false) !== HEADER_SIZE) {
      throw new SchemaMismatch(`${path}: sizeof_hdr is not 348 in either byte order`);
    }
    little = false;
  }
  const magic = buf.toString("latin1", 344, 347);
  if (magic !== "n+1" && magic !== "ni1") {
    throw new SchemaMismatch(`${path}: bad magic ${JSON.stringify(magic)}`);
  }

  const ndim = view.getInt16(40, little);
  if (ndim !== 3) {
    throw new SchemaMismatch(`${path}: expected a 3D volume, dim[0]=${ndim}`);
  }
  const dims: [number, number, number] = [
    view.getInt16(42, little),
    view.getInt16(44, little),
    view.getInt16(46, little),
  ];
  const voxelSize: [number, number, number] = [
    view.getFloat32(80, little),
    view.getFloat32(84, little),
    view.getFloat32(88, little),
  ];
  const datatype = view.getInt16(70, little);
  const voxOffset = view.getFloat32(108, little);
  const slope = view.getFloat32(112, little);
  const inter = view.getFloat32(116, little);

  const n = dims[0] * dims[1] * dims[2];
  const values = new Float32Array(n);
  const base = Math.floor(voxOffset);
  const need = (bytesPer: number) => {
    if (buf.length < base + n * bytesPer) {
      throw new SchemaMismatch(`${path}: truncated voxel data`);
    }
  };
  if (datatype === 16) {
    need(4);
    for (let i = 0; i < n; i++) values[i] = view.getFloat32(base + 4 * i, little);
  } else if (datatype === 4) {
    need(2);
    for (let i = 0; i < n; i++) values[i] = view.getInt16(base + 2 * i, little);
  } else if (datatype === 2) {
    need(1);
    for (let i = 0; i < n; i++) values[i] = view.getUint8(base + i);
  } else {
    throw new SchemaMismatch(`${path}: unsupported datatype code ${datatype}`);
  }
  if (slope !== 0 && !(slope === 1 && inter === 0)) {
    for (let i = 0; i < n; i++) values[i] = values[i] * slope + inter;
  }
  // file stores column-major (x fastest); reorder to row-major [x][y][z]
  const [nx, ny, nz] = dims;
  const c = new Float32Array(n);
  let f = 0;
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      for (let x = 0; x < nx; x++) {
        c[(x * ny + y) * nz + z] = values[f++];
      }
    }
  }
  return { dims, values: c, voxelSize };
}

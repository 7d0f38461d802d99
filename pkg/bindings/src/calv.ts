/**
 * CALV1 volume codec.
 *
 * Layout (all integers little-endian):
 *   bytes 0-4   magic "CALV1"
 *   byte  5     dtype code: 1 = float32, 2 = uint8, 3 = uint16, 4 = float64
 *   bytes 6-13  ndim as uint64
 *   then        ndim uint64 dimensions
 *   then        raw C-order payload
 *
 * Volumes are exchanged with the native engine by file; the codec never
 * copies payload memory: writes alias the caller's typed-array buffer and
 * reads fill one freshly allocated typed array that is returned as-is.
 */

import * as fs from "node:fs";
import * as os from "node:os";

const MAGIC = Buffer.from("CALV1", "ascii");

export type DTypeName = "float32" | "uint8" | "uint16" | "float64";

export type TypedPayload = Float32Array | Uint8Array | Uint16Array | Float64Array;

/** Descriptor for a contiguous C-order tensor over caller-owned memory. */
export interface TensorView {
  dtype: DTypeName;
  shape: readonly number[];
  data: TypedPayload;
}

export class VolumeFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "VolumeFormatError";
  }
}

const CODE_TO_DTYPE: Record<number, DTypeName> = {
  1: "float32",
  2: "uint8",
  3: "uint16",
  4: "float64",
};

const DTYPE_TO_CODE: Record<DTypeName, number> = {
  float32: 1,
  uint8: 2,
  uint16: 3,
  float64: 4,
};

const CONSTRUCTORS: Record<DTypeName, new (n: number) => TypedPayload> = {
  float32: Float32Array,
  uint8: Uint8Array,
  uint16: Uint16Array,
  float64: Float64Array,
};

function requireLittleEndian(): void {
  if (os.endianness() !== "LE") {
    throw new VolumeFormatError("CALV1 codec requires a little-endian host");
  }
}

function elementCount(shape: readonly number[]): number {
  let count = 1;
  for (const dim of shape) {
    if (!Number.isInteger(dim) || dim < 0) {
      throw new VolumeFormatError(`invalid dimension ${dim}`);
    }
    count *= dim;
  }
  return count;
}

export function dtypeOf(data: TypedPayload): DTypeName {
  if (data instanceof Float32Array) return "float32";
  if (data instanceof Uint8Array) return "uint8";
  if (data instanceof Uint16Array) return "uint16";
  if (data instanceof Float64Array) return "float64";
  throw new VolumeFormatError("unsupported payload type");
}

/** Validate a view: dtype consistent with payload, element count matches shape. */
export function checkView(view: TensorView): void {
  if (dtypeOf(view.data) !== view.dtype) {
    throw new VolumeFormatError(
      `payload is ${dtypeOf(view.data)} but descriptor says ${view.dtype}`,
    );
  }
  const count = elementCount(view.shape);
  if (view.data.length !== count) {
    throw new VolumeFormatError(
      `shape [${view.shape.join(", ")}] implies ${count} elements, payload has ${view.data.length}`,
    );
  }
}

export function view(data: TypedPayload, shape: readonly number[]): TensorView {
  const v: TensorView = { dtype: dtypeOf(data), shape: [...shape], data };
  checkView(v);
  return v;
}

/**
 * Serialize a view to a CALV1 file.  The payload bytes written are the
 * caller's buffer viewed in place (no intermediate copy).
 */
export function writeVolume(path: string, tensor: TensorView): void {
  requireLittleEndian();
  checkView(tensor);
  const code = DTYPE_TO_CODE[tensor.dtype];
  const header = Buffer.alloc(MAGIC.length + 1 + 8 + 8 * tensor.shape.length);
  MAGIC.copy(header, 0);
  header.writeUInt8(code, MAGIC.length);
  header.writeBigUInt64LE(BigInt(tensor.shape.length), MAGIC.length + 1);
  tensor.shape.forEach((dim, i) => {
    header.writeBigUInt64LE(BigInt(dim), MAGIC.length + 9 + 8 * i);
  });
  const payload = Buffer.from(
    tensor.data.buffer,
    tensor.data.byteOffset,
    tensor.data.byteLength,
  );
  const fd = fs.openSync(path, "w");
  try {
    fs.writeSync(fd, header);
    fs.writeSync(fd, payload);
  } finally {
    fs.closeSync(fd);
  }
}

/** Read only the dtype and shape of a CALV1 file. */
export function peekVolumeHeader(path: string): {
  dtype: DTypeName;
  shape: number[];
  payloadOffset: number;
} {
  const fd = fs.openSync(path, "r");
  try {
    return readHeader(fd, path);
  } finally {
    fs.closeSync(fd);
  }
}

function readHeader(
  fd: number,
  path: string,
): { dtype: DTypeName; shape: number[]; payloadOffset: number } {
  const fixed = Buffer.alloc(MAGIC.length + 9);
  if (fs.readSync(fd, fixed, 0, fixed.length, 0) !== fixed.length) {
    throw new VolumeFormatError(`${path}: truncated header`);
  }
  if (!fixed.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new VolumeFormatError(`${path}: bad magic, not a CALV1 file`);
  }
  const code = fixed.readUInt8(MAGIC.length);
  const dtype = CODE_TO_DTYPE[code];
  if (dtype === undefined) {
    throw new VolumeFormatError(`${path}: unknown dtype code ${code}`);
  }
  const ndimBig = fixed.readBigUInt64LE(MAGIC.length + 1);
  if (ndimBig > 32n) {
    throw new VolumeFormatError(`${path}: implausible ndim ${ndimBig}`);
  }
  const ndim = Number(ndimBig);
  const dimsBuf = Buffer.alloc(8 * ndim);
  if (fs.readSync(fd, dimsBuf, 0, dimsBuf.length, fixed.length) !== dimsBuf.length) {
    throw new VolumeFormatError(`${path}: truncated dimension list`);
  }
  const shape: number[] = [];
  for (let i = 0; i < ndim; i += 1) {
    const dim = dimsBuf.readBigUInt64LE(8 * i);
    if (dim > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new VolumeFormatError(`${path}: dimension ${dim} too large`);
    }
    shape.push(Number(dim));
  }
  return { dtype, shape, payloadOffset: fixed.length + dimsBuf.length };
}

/**
 * Read a CALV1 file into a freshly allocated typed array.  The payload is
 * read directly into the returned array's buffer — a single allocation,
 * no staging copy.
 */
export function readVolume(path: string): TensorView {
  requireLittleEndian();
  const fd = fs.openSync(path, "r");
  try {
    const { dtype, shape, payloadOffset } = readHeader(fd, path);
    const count = elementCount(shape);
    const data = new CONSTRUCTORS[dtype](count);
    const target = Buffer.from(data.buffer, 0, data.byteLength);
    const got = fs.readSync(fd, target, 0, target.length, payloadOffset);
    if (got !== target.length) {
      throw new VolumeFormatError(
        `${path}: payload truncated (${got} of ${target.length} bytes)`,
      );
    }
    return { dtype, shape, data };
  } finally {
    fs.closeSync(fd);
  }
}

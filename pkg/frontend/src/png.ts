/**
 * Minimal deterministic PNG codec for 8-bit grayscale rasters.
 *
 * The encoder emits a fixed byte layout (zlib stream with stored deflate
 * blocks, filter 0 on every scanline) so that encoding the same raster
 * always yields the same bytes — replaying a stroke log must reproduce the
 * PUT payload byte-for-byte.
 */

const PNG_SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(v: number): number[] {
  return [(v >>> 24) & 0xff, (v >>> 16) & 0xff, (v >>> 8) & 0xff, v & 0xff];
}

function chunk(type: string, data: number[] | Uint8Array): number[] {
  const typeBytes = [...type].map((c) => c.charCodeAt(0));
  const body = new Uint8Array([...typeBytes, ...data]);
  return [...u32be(data.length), ...body, ...u32be(crc32(body))];
}

/** zlib stream using stored (uncompressed) deflate blocks only. */
function zlibStore(raw: Uint8Array): number[] {
  const out: number[] = [0x78, 0x01];
  const max = 65535;
  for (let pos = 0; pos < raw.length || pos === 0; pos += max) {
    const block = raw.subarray(pos, Math.min(pos + max, raw.length));
    const final = pos + max >= raw.length ? 1 : 0;
    const len = block.length;
    out.push(final, len & 0xff, (len >>> 8) & 0xff,
             ~len & 0xff, (~len >>> 8) & 0xff);
    out.push(...block);
    if (raw.length === 0) break;
  }
  out.push(...u32be(adler32(raw)));
  return out;
}

/** Encode a 0/1-valued raster (row-major, length w*h) as a grayscale PNG. */
export function encodeGrayPng(
  raster: Uint8Array, width: number, height: number,
): Uint8Array {
  if (raster.length !== width * height) {
    throw new Error(`raster length ${raster.length} != ${width}x${height}`);
  }
  const scanlines = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    scanlines[y * (width + 1)] = 0; // filter: none
    for (let x = 0; x < width; x++) {
      scanlines[y * (width + 1) + 1 + x] = raster[y * width + x] ? 255 : 0;
    }
  }
  const ihdr = [...u32be(width), ...u32be(height),
                8 /* bit depth */, 0 /* grayscale */, 0, 0, 0];
  const bytes = [
    ...PNG_SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", zlibStore(scanlines)),
    ...chunk("IEND", []),
  ];
  return new Uint8Array(bytes);
}

export function toBase64(bytes: Uint8Array): string {
  let bin = "";
  for (let i = 0; i < bytes.length; i++) {
    bin += String.fromCharCode(bytes[i]);
  }
  // btoa exists in browsers; Buffer in node (vitest)
  if (typeof btoa === "function") return btoa(bin);
  return Buffer.from(bytes).toString("base64");
}

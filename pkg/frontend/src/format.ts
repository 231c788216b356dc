export function formatBytes(n: number): string {
  if (n < 1024) return `${n} B`;
  if (n < 1024 * 1024) return `${(n / 1024).toFixed(1)} kB`;
  return `${(n / (1024 * 1024)).toFixed(2)} MB`;
}

export function formatSimTime(t_us: number): string {
  const s = t_us / 1_000_000;
  if (s < 60) return `${s.toFixed(1)}s`;
  const m = Math.floor(s / 60);
  return `${m}m${(s - m * 60).toFixed(0)}s`;
}

export function formatMs(ms: number): string {
  return `${ms.toFixed(1)} ms`;
}

export function formatValues(values: number[] | null): string {
  if (!values) return "-";
  const [t, h, p] = values;
  return `${t.toFixed(2)} degC  ${h.toFixed(2)} %RH  ${p.toFixed(2)} hPa`;
}

/** Group a hex string into spaced byte pairs for the security panel. */
export function groupHex(hex: string, group = 2, perLine = 16): string {
  const bytes = hex.match(/.{1,2}/g) ?? [];
  const lines: string[] = [];
  for (let i = 0; i < bytes.length; i += perLine) {
    lines.push(bytes.slice(i, i + perLine).join(" "));
  }
  return lines.join("\n");
}

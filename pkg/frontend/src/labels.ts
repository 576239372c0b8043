/** Client-side mirror of the service's label normalization. */

export function normalizeLabelInput(raw: string): string {
  return raw.toUpperCase().replace(/[^A-Z0-9]/g, "");
}

export function isValidLabel(label: string): boolean {
  return /^[A-Z0-9]+$/.test(label);
}

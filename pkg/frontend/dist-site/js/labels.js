/** Client-side mirror of the service's label normalization. */
export function normalizeLabelInput(raw) {
    return raw.toUpperCase().replace(/[^A-Z0-9]/g, "");
}
export function isValidLabel(label) {
    return /^[A-Z0-9]+$/.test(label);
}

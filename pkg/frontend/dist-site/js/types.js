/** JSON shapes returned by the adjudication service. */
export {};

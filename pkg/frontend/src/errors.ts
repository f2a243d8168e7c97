/** Error types for the tumor classifier package. */

export class ClassifierError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

/** Manifest columns or values do not match the export schema. */
export class SchemaMismatch extends ClassifierError {}

/** A tensor's dims differ from the enforced input shape. */
export class ShapeMismatch extends ClassifierError {}

/** A file referenced by the manifest does not exist. */
export class MissingFile extends ClassifierError {}

/** An architecture or training configuration is invalid. */
export class SpecInvalid extends ClassifierError {}

/** A leave-one-out fold's training set contains a single class. */
export class DegenerateFold extends ClassifierError {}

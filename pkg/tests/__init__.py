# Tests for the anisotropic adaptation toolkit

"""Cross-domain disentangling GAN at desk scale.

Two image domains, attribute labels on the source side only.  Adversarially
trained weight-shared generator/discriminator (and optionally encoder)
stacks learn a shared latent space in which a categorical attribute can be
controlled: conditional synthesis in both domains, image translation
between them, and target-domain classification through the discriminator's
auxiliary head.
"""

__version__ = "0.1.0"

# secondary hits at or below this distance (cells) are relay re-entries the simulator drops
MIN_SECONDARY_T = 1e-9
# carving stops this far (cells) short of the certified radius to absorb bin-edge round-off
CARVE_MARGIN = 1e-6
